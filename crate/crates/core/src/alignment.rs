//! Cross-modal alignment scores and the de-duplicated perturbation pool.

use std::collections::BTreeMap;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::corpus::{EmbeddingMatrix, HypothesisRecord, QualityVector};
use crate::error::{Error, Result};
use crate::predictor::PredictorNet;

/// Hypotheses produced per utterance before de-duplication.
pub const MAX_HYPOTHESES: usize = 28;

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Cosine similarity, accumulated in f64.
pub fn cosine<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = (x.into(), y.into());
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroNorm("cosine operand".into()));
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

pub fn euclidean<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.into() - y.into();
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Trims and collapses internal whitespace runs to one space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One utterance after de-duplication.
#[derive(Clone, Debug, PartialEq)]
pub struct UtterancePool {
    pub utt_id: String,
    pub baseline: HypothesisRecord,
    /// Retained perturbed hypotheses, sorted by `hyp_id`.
    pub perturbed: Vec<HypothesisRecord>,
    pub dropped_baseline_equal: usize,
    pub dropped_duplicates: usize,
}

impl UtterancePool {
    pub fn k(&self) -> usize {
        self.perturbed.len()
    }

    pub fn hypotheses(&self) -> impl Iterator<Item = &HypothesisRecord> {
        std::iter::once(&self.baseline).chain(&self.perturbed)
    }
}

/// All utterances of a pool, sorted by `utt_id`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PoolSkeleton {
    pub utterances: Vec<UtterancePool>,
}

impl PoolSkeleton {
    /// Retained hypotheses in (utt_id, baseline first, hyp_id) order.
    pub fn hypotheses(&self) -> Vec<HypothesisRecord> {
        self.utterances
            .iter()
            .flat_map(|u| u.hypotheses().cloned())
            .collect()
    }

    pub fn hypothesis_count(&self) -> usize {
        self.utterances.iter().map(|u| 1 + u.k()).sum()
    }
}

/// Groups hypotheses by utterance and removes perturbed hypotheses whose
/// normalized text repeats the baseline or another perturbed hypothesis.
/// Among duplicates the least perturbed one (then smallest `hyp_id`) is kept.
pub fn dedup_pool(hyps: &[HypothesisRecord]) -> Result<PoolSkeleton> {
    let mut by_utt: BTreeMap<&str, Vec<&HypothesisRecord>> = BTreeMap::new();
    for h in hyps {
        by_utt.entry(h.utt_id.as_str()).or_default().push(h);
    }
    let mut utterances = Vec::with_capacity(by_utt.len());
    for (utt_id, group) in by_utt {
        if group.len() > MAX_HYPOTHESES {
            return Err(Error::TooManyHypotheses {
                id: utt_id.to_string(),
                count: group.len(),
                max: MAX_HYPOTHESES,
            });
        }
        let mut baselines = group.iter().filter(|h| h.perturbation.is_baseline());
        let baseline = *baselines
            .next()
            .ok_or_else(|| Error::MissingBaseline(utt_id.to_string()))?;
        if baselines.next().is_some() {
            return Err(Error::InvalidArgument(format!(
                "utterance `{utt_id}` has more than one baseline hypothesis"
            )));
        }
        let mut seen_ids = std::collections::HashSet::new();
        for h in &group {
            if !seen_ids.insert(h.hyp_id.as_str()) {
                return Err(Error::DuplicateId(h.hyp_id.clone()));
            }
        }
        let base_text = normalize_text(&baseline.text);
        let mut perturbed: Vec<&HypothesisRecord> = group
            .iter()
            .copied()
            .filter(|h| !h.perturbation.is_baseline())
            .collect();
        perturbed.sort_by(|a, b| {
            (a.perturbation.magnitude_key(), &a.hyp_id)
                .cmp(&(b.perturbation.magnitude_key(), &b.hyp_id))
        });
        let mut kept_texts = std::collections::HashSet::new();
        let mut kept = Vec::new();
        let (mut dropped_baseline_equal, mut dropped_duplicates) = (0, 0);
        for h in perturbed {
            let t = normalize_text(&h.text);
            if t == base_text {
                dropped_baseline_equal += 1;
            } else if !kept_texts.insert(t) {
                dropped_duplicates += 1;
            } else {
                kept.push(h.clone());
            }
        }
        kept.sort_by(|a, b| a.hyp_id.cmp(&b.hyp_id));
        utterances.push(UtterancePool {
            utt_id: utt_id.to_string(),
            baseline: baseline.clone(),
            perturbed: kept,
            dropped_baseline_equal,
            dropped_duplicates,
        });
    }
    Ok(PoolSkeleton { utterances })
}

/// Scores every retained hypothesis. Speech embeddings are keyed by
/// `utt_id`, text embeddings by `hyp_id`. Output is sorted by
/// (utt_id, hyp_id).
pub fn score_pool(
    skeleton: &PoolSkeleton,
    speech: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    net: &PredictorNet,
) -> Result<Vec<QualityVector>> {
    let per_utt: Vec<Vec<QualityVector>> = skeleton
        .utterances
        .par_iter()
        .map(|u| {
            let sp = speech.get(&u.utt_id).ok_or_else(|| Error::Missing {
                kind: "speech embedding",
                id: u.utt_id.clone(),
            })?;
            u.hypotheses()
                .map(|h| {
                    let tx = text.get(&h.hyp_id).ok_or_else(|| Error::Missing {
                        kind: "text embedding",
                        id: h.hyp_id.clone(),
                    })?;
                    Ok(QualityVector {
                        utt_id: h.utt_id.clone(),
                        hyp_id: h.hyp_id.clone(),
                        pred_wer: net.predict(sp, tx)?,
                        cos: cosine(sp, tx)?,
                        euc: euclidean(sp, tx)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<QualityVector> = per_utt.into_iter().flatten().collect();
    out.sort_by(|a, b| (&a.utt_id, &a.hyp_id).cmp(&(&b.utt_id, &b.hyp_id)));
    Ok(out)
}

/// A scored hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub hyp: HypothesisRecord,
    pub quality: QualityVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredUtterance {
    pub utt_id: String,
    pub baseline: Scored,
    pub perturbed: Vec<Scored>,
}

/// De-duplicated pool with a quality vector for every retained hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationPool {
    pub utterances: Vec<ScoredUtterance>,
    hash: String,
}

impl PerturbationPool {
    /// Joins a skeleton with scores. Scores for hypotheses that are not in
    /// the skeleton are ignored.
    pub fn new(skeleton: &PoolSkeleton, scores: &[QualityVector]) -> Result<Self> {
        let index: std::collections::HashMap<(&str, &str), &QualityVector> = scores
            .iter()
            .map(|q| ((q.utt_id.as_str(), q.hyp_id.as_str()), q))
            .collect();
        let attach = |h: &HypothesisRecord| -> Result<Scored> {
            let q = index
                .get(&(h.utt_id.as_str(), h.hyp_id.as_str()))
                .ok_or_else(|| Error::Missing {
                    kind: "score",
                    id: h.hyp_id.clone(),
                })?;
            q.validate()?;
            Ok(Scored {
                hyp: h.clone(),
                quality: (*q).clone(),
            })
        };
        let utterances = skeleton
            .utterances
            .iter()
            .map(|u| {
                Ok(ScoredUtterance {
                    utt_id: u.utt_id.clone(),
                    baseline: attach(&u.baseline)?,
                    perturbed: u.perturbed.iter().map(attach).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let hash = pool_hash(&utterances);
        Ok(PerturbationPool { utterances, hash })
    }

    /// Hex SHA-256 over the pool's ids, texts and exact score bits.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

fn pool_hash(utterances: &[ScoredUtterance]) -> String {
    let mut h = Sha256::new();
    for u in utterances {
        for s in std::iter::once(&u.baseline).chain(&u.perturbed) {
            let q = &s.quality;
            h.update(s.hyp.utt_id.as_bytes());
            h.update([0]);
            h.update(s.hyp.hyp_id.as_bytes());
            h.update([0]);
            h.update(s.hyp.text.as_bytes());
            h.update([0]);
            for v in [q.pred_wer, q.cos, q.euc] {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update(s.hyp.ppl.map_or(u64::MAX, f64::to_bits).to_le_bytes());
        }
        h.update([1]);
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
