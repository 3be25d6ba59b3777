//! Labeled-pair files: speech and text EMB1 matrices aligned by id, plus a
//! JSONL of `{id, target_wer}` that fixes the order.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabeledPair;
use crate::corpus::{read_embeddings, read_jsonl, write_embeddings, write_jsonl, EmbeddingMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub id: String,
    pub target_wer: f64,
}

/// Paths of one labeled-pair set.
#[derive(Clone, Copy, Debug)]
pub struct PairFiles<'a> {
    pub speech: &'a Path,
    pub text: &'a Path,
    pub targets: &'a Path,
}

pub fn read_labeled_pairs(files: PairFiles<'_>) -> Result<(Vec<String>, Vec<LabeledPair>)> {
    let speech = read_embeddings(files.speech)?;
    let text = read_embeddings(files.text)?;
    let targets: Vec<TargetRecord> = read_jsonl(files.targets)?;
    let mut seen = HashSet::new();
    let mut ids = Vec::with_capacity(targets.len());
    let mut pairs = Vec::with_capacity(targets.len());
    for t in targets {
        if !seen.insert(t.id.clone()) {
            return Err(Error::DuplicateId(t.id));
        }
        let row = |m: &EmbeddingMatrix, kind| {
            m.get(&t.id).map(<[f32]>::to_vec).ok_or_else(|| Error::Missing {
                kind,
                id: t.id.clone(),
            })
        };
        pairs.push(LabeledPair::new(
            row(&speech, "speech embedding")?,
            row(&text, "text embedding")?,
            t.target_wer,
        )?);
        ids.push(t.id);
    }
    Ok((ids, pairs))
}

pub fn write_labeled_pairs(ids: &[String], pairs: &[LabeledPair], files: PairFiles<'_>) -> Result<()> {
    if ids.len() != pairs.len() {
        return Err(Error::DimMismatch {
            expected: pairs.len(),
            found: ids.len(),
        });
    }
    let dim = |f: fn(&LabeledPair) -> usize| pairs.first().map_or(1, f);
    let mut speech = EmbeddingMatrix::new(dim(|p| p.speech_emb.len()))?;
    let mut text = EmbeddingMatrix::new(dim(|p| p.text_emb.len()))?;
    let mut targets = Vec::with_capacity(pairs.len());
    for (id, p) in ids.iter().zip(pairs) {
        speech.push(id.clone(), &p.speech_emb)?;
        text.push(id.clone(), &p.text_emb)?;
        targets.push(TargetRecord {
            id: id.clone(),
            target_wer: p.target_wer,
        });
    }
    write_embeddings(&speech, files.speech)?;
    write_embeddings(&text, files.text)?;
    write_jsonl(files.targets, &targets)
}
