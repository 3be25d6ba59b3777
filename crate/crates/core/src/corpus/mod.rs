//! Shared record types and their on-disk formats.
//!
//! Manifests, hypothesis files, score files and subset files are JSON lines
//! (one object per line, UTF-8). Unknown keys are ignored when reading.

mod embedding;
mod perturbation;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use embedding::{read_embeddings, write_embeddings, EmbeddingMatrix, EMB1_MAGIC};
pub use perturbation::PerturbationDescriptor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Pool,
    Query,
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub duration_sec: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<String>,
    /// Only evaluation code may look at this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_text: Option<String>,
    #[serde(default)]
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisRecord {
    pub utt_id: String,
    pub hyp_id: String,
    pub text: String,
    pub perturbation: PerturbationDescriptor,
    pub ppl: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct HypothesisLine {
    utt_id: String,
    hyp_id: String,
    text: String,
    alpha: f64,
    pitch_semitones: i64,
    atempo: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ppl: Option<f64>,
}

impl From<&HypothesisRecord> for HypothesisLine {
    fn from(h: &HypothesisRecord) -> Self {
        HypothesisLine {
            utt_id: h.utt_id.clone(),
            hyp_id: h.hyp_id.clone(),
            text: h.text.clone(),
            alpha: h.perturbation.alpha(),
            pitch_semitones: h.perturbation.pitch_semitones(),
            atempo: h.perturbation.atempo(),
            ppl: h.ppl,
        }
    }
}

/// Reference-free quality scores of one hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityVector {
    pub utt_id: String,
    pub hyp_id: String,
    pub pred_wer: f64,
    pub cos: f64,
    pub euc: f64,
}

impl QualityVector {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.01..=0.99).contains(&self.pred_wer)
            && self.cos.abs() <= 1.0 + 1e-6
            && self.euc >= 0.0
            && self.euc.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "quality vector for {}/{} out of range: pred_wer={} cos={} euc={}",
                self.utt_id, self.hyp_id, self.pred_wer, self.cos, self.euc
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Conf,
    PredOnly,
    CosOnly,
    EucOnly,
    StableBase,
    ConfStable,
    Ppl,
    Random,
    CerConsistency,
    WerBinary,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionEntry {
    pub utt_id: String,
    pub hyp_id: String,
    pub text: String,
    pub weight: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub rule: Rule,
    pub p: Option<u32>,
    pub p2: Option<u32>,
    pub thresholds: BTreeMap<String, f64>,
    pub entries: Vec<SelectionEntry>,
}

#[derive(Serialize, Deserialize)]
struct SubsetLine {
    utt_id: String,
    hyp_id: String,
    text: String,
    weight: u32,
    rule: Rule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p2: Option<u32>,
    thresholds: BTreeMap<String, f64>,
}

impl SelectionResult {
    pub fn new(rule: Rule) -> Self {
        SelectionResult {
            rule,
            p: None,
            p2: None,
            thresholds: BTreeMap::new(),
            entries: Vec::new(),
        }
    }

    pub fn utt_ids(&self) -> HashSet<&str> {
        self.entries.iter().map(|e| e.utt_id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn validate_manifest(records: &[UtteranceRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if r.utt_id.is_empty() {
            return Err(Error::InvalidArgument("empty utt_id".into()));
        }
        if !(r.duration_sec >= 0.0) || !r.duration_sec.is_finite() {
            return Err(Error::NegativeDuration {
                id: r.utt_id.clone(),
                duration: r.duration_sec,
            });
        }
        if !seen.insert(r.utt_id.as_str()) {
            return Err(Error::DuplicateId(r.utt_id.clone()));
        }
    }
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
    let records: Vec<UtteranceRecord> = read_jsonl(path)?;
    validate_manifest(&records)?;
    Ok(records)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[UtteranceRecord]) -> Result<()> {
    validate_manifest(records)?;
    write_jsonl(path, records)
}

fn read_hypotheses_with(
    path: &Path,
    parse: fn(f64, i64, f64) -> Result<PerturbationDescriptor>,
) -> Result<Vec<HypothesisRecord>> {
    let lines: Vec<HypothesisLine> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(lines.len());
    for (i, l) in lines.into_iter().enumerate() {
        let perturbation = parse(l.alpha, l.pitch_semitones, l.atempo).map_err(|e| {
            Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            }
        })?;
        if let Some(ppl) = l.ppl {
            if !(ppl >= 0.0) || !ppl.is_finite() {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("perplexity {ppl} must be finite and non-negative"),
                });
            }
        }
        if !seen.insert((l.utt_id.clone(), l.hyp_id.clone())) {
            return Err(Error::DuplicateId(format!("{}/{}", l.utt_id, l.hyp_id)));
        }
        out.push(HypothesisRecord {
            utt_id: l.utt_id,
            hyp_id: l.hyp_id,
            text: l.text,
            perturbation,
            ppl: l.ppl,
        });
    }
    Ok(out)
}

/// Reads a hypothesis file, accepting only the 28 selected perturbation
/// configurations.
pub fn read_hypotheses(path: impl AsRef<Path>) -> Result<Vec<HypothesisRecord>> {
    read_hypotheses_with(path.as_ref(), PerturbationDescriptor::selected)
}

/// Like [`read_hypotheses`] but accepts any descriptor on the 0.01 grid, as
/// produced by exploratory perturbation sweeps.
pub fn read_hypotheses_lenient(path: impl AsRef<Path>) -> Result<Vec<HypothesisRecord>> {
    read_hypotheses_with(path.as_ref(), PerturbationDescriptor::from_values)
}

pub fn write_hypotheses(path: impl AsRef<Path>, hyps: &[HypothesisRecord]) -> Result<()> {
    let lines: Vec<HypothesisLine> = hyps.iter().map(HypothesisLine::from).collect();
    write_jsonl(path, &lines)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<QualityVector>> {
    let path = path.as_ref();
    let scores: Vec<QualityVector> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for (i, q) in scores.iter().enumerate() {
        q.validate().map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert((q.utt_id.as_str(), q.hyp_id.as_str())) {
            return Err(Error::DuplicateId(format!("{}/{}", q.utt_id, q.hyp_id)));
        }
    }
    Ok(scores)
}

pub fn write_scores(path: impl AsRef<Path>, scores: &[QualityVector]) -> Result<()> {
    write_jsonl(path, scores)
}

pub fn write_subset(path: impl AsRef<Path>, result: &SelectionResult) -> Result<()> {
    let lines: Vec<SubsetLine> = result
        .entries
        .iter()
        .map(|e| SubsetLine {
            utt_id: e.utt_id.clone(),
            hyp_id: e.hyp_id.clone(),
            text: e.text.clone(),
            weight: e.weight,
            rule: result.rule,
            p: result.p,
            p2: result.p2,
            thresholds: result.thresholds.clone(),
        })
        .collect();
    write_jsonl(path, &lines)
}

/// Reads a subset file. An empty file yields `None` because the rule is
/// only recorded per line.
pub fn read_subset(path: impl AsRef<Path>) -> Result<Option<SelectionResult>> {
    let lines: Vec<SubsetLine> = read_jsonl(path)?;
    let Some(first) = lines.first() else {
        return Ok(None);
    };
    let mut result = SelectionResult {
        rule: first.rule,
        p: first.p,
        p2: first.p2,
        thresholds: first.thresholds.clone(),
        entries: Vec::with_capacity(lines.len()),
    };
    for l in lines {
        if l.weight == 0 {
            return Err(Error::InvalidArgument(format!(
                "entry {}/{} has zero weight",
                l.utt_id, l.hyp_id
            )));
        }
        result.entries.push(SelectionEntry {
            utt_id: l.utt_id,
            hyp_id: l.hyp_id,
            text: l.text,
            weight: l.weight,
        });
    }
    Ok(Some(result))
}

/// Plain-text id list: `#` lines are comments, one id per remaining line.
pub fn read_id_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (_, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        let id = line.trim();
        if id.is_empty() || id.starts_with('#') {
            continue;
        }
        out.push(id.to_string());
    }
    Ok(out)
}

pub fn write_id_list(path: impl AsRef<Path>, header: &str, ids: &[String]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "# {header}").map_err(io)?;
    for id in ids {
        writeln!(w, "{id}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn manifest_minimal_line() {
        let f = write_tmp("{\"utt_id\":\"a\",\"duration_sec\":2.5}\n");
        let m = read_manifest(f.path()).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].utt_id, "a");
        assert_eq!(m[0].duration_sec, 2.5);
        assert_eq!(m[0].split, Split::Pool);
        assert!(m[0].ref_text.is_none());
    }

    #[test]
    fn manifest_duplicate_id() {
        let f = write_tmp(
            "{\"utt_id\":\"a\",\"duration_sec\":1}\n{\"utt_id\":\"a\",\"duration_sec\":2}\n",
        );
        assert!(matches!(read_manifest(f.path()), Err(Error::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn manifest_negative_duration() {
        let f = write_tmp("{\"utt_id\":\"a\",\"duration_sec\":-1}\n");
        assert!(matches!(
            read_manifest(f.path()),
            Err(Error::NegativeDuration { .. })
        ));
    }

    #[test]
    fn manifest_malformed_line_number() {
        let f = write_tmp("{\"utt_id\":\"a\",\"duration_sec\":1}\n{not json\n");
        match read_manifest(f.path()) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn manifest_ignores_unknown_keys_and_round_trips() {
        let f = write_tmp(
            "{\"utt_id\":\"a\",\"duration_sec\":1.25,\"speaker\":\"x\",\"ref_text\":\"hi there\",\"split\":\"query\"}\n",
        );
        let m = read_manifest(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_manifest(out.path(), &m).unwrap();
        let text = std::fs::read_to_string(out.path()).unwrap();
        assert!(!text.contains("speaker"));
        assert_eq!(read_manifest(out.path()).unwrap(), m);
    }

    #[test]
    fn hypotheses_validate_descriptors() {
        let good = write_tmp(
            "{\"utt_id\":\"u\",\"hyp_id\":\"h0\",\"text\":\"a b\",\"alpha\":0.0,\"pitch_semitones\":0,\"atempo\":1.0,\"ppl\":12.5}\n\
             {\"utt_id\":\"u\",\"hyp_id\":\"h1\",\"text\":\"a c\",\"alpha\":0.02,\"pitch_semitones\":-2,\"atempo\":0.95}\n",
        );
        let hyps = read_hypotheses(good.path()).unwrap();
        assert!(hyps[0].perturbation.is_baseline());
        assert_eq!(hyps[0].ppl, Some(12.5));
        assert_eq!(hyps[1].perturbation.atempo(), 0.95);

        let bad = write_tmp(
            "{\"utt_id\":\"u\",\"hyp_id\":\"h0\",\"text\":\"a\",\"alpha\":0.04,\"pitch_semitones\":0,\"atempo\":1.0}\n",
        );
        assert!(matches!(read_hypotheses(bad.path()), Err(Error::Malformed { line: 1, .. })));
        assert!(read_hypotheses_lenient(bad.path()).is_ok());
    }

    #[test]
    fn hypotheses_round_trip_bytes() {
        let f = write_tmp(
            "{\"utt_id\":\"u\",\"hyp_id\":\"h1\",\"text\":\"a c\",\"alpha\":0.03,\"pitch_semitones\":1,\"atempo\":1.0}\n",
        );
        let hyps = read_hypotheses(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_hypotheses(out.path(), &hyps).unwrap();
        assert_eq!(
            std::fs::read_to_string(out.path()).unwrap(),
            std::fs::read_to_string(f.path()).unwrap()
        );
    }

    #[test]
    fn subset_round_trip() {
        let mut r = SelectionResult::new(Rule::ConfStable);
        r.p = Some(70);
        r.p2 = Some(50);
        r.thresholds.insert("pred".into(), 0.125);
        r.entries.push(SelectionEntry {
            utt_id: "u".into(),
            hyp_id: "h".into(),
            text: "t".into(),
            weight: 1,
        });
        let out = tempfile::NamedTempFile::new().unwrap();
        write_subset(out.path(), &r).unwrap();
        assert_eq!(read_subset(out.path()).unwrap(), Some(r));
    }

    #[test]
    fn id_list_skips_header() {
        let out = tempfile::NamedTempFile::new().unwrap();
        write_id_list(out.path(), "preselect", &[]).unwrap();
        assert_eq!(std::fs::read_to_string(out.path()).unwrap(), "# preselect\n");
        write_id_list(out.path(), "x", &["b".into(), "a".into()]).unwrap();
        assert_eq!(read_id_list(out.path()).unwrap(), vec!["b", "a"]);
    }
}
