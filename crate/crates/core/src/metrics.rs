//! Word/character error rates, hour accounting and evaluation summaries.
//!
//! This is the only module that reads reference transcripts. Selection rules
//! never call into it except for the CER consistency baseline, which compares
//! hypotheses with each other.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{HypothesisRecord, PerturbationDescriptor, SelectionResult, UtteranceRecord};
use crate::error::{Error, Result};

/// Edit operation counts of a minimal alignment. `rate` is `None` when the
/// reference is empty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRateBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
    pub rate: Option<f64>,
}

impl ErrorRateBreakdown {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Unit-cost Levenshtein alignment. Among minimum-cost alignments the one
/// with the most substitutions is reported; remaining ties are resolved in
/// the traceback by preferring a diagonal step, then deletion, then
/// insertion. Swapping the arguments therefore swaps deletions and
/// insertions and leaves substitutions unchanged.
pub fn edit_distance_units<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> ErrorRateBreakdown {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    // (cost, -substitutions); lexicographically smaller is better
    let mut d = vec![(0u32, 0i32); (n + 1) * w];
    for j in 0..=m {
        d[j] = (j as u32, 0);
    }
    let step = |(c, s): (u32, i32), sub: bool| if sub { (c + 1, s - 1) } else { (c, s) };
    let gap = |(c, s): (u32, i32)| (c + 1, s);
    for i in 1..=n {
        d[i * w] = (i as u32, 0);
        for j in 1..=m {
            let diag = step(d[(i - 1) * w + j - 1], reference[i - 1] != hypothesis[j - 1]);
            let del = gap(d[(i - 1) * w + j]);
            let ins = gap(d[i * w + j - 1]);
            d[i * w + j] = diag.min(del).min(ins);
        }
    }
    let (mut s, mut del, mut ins) = (0, 0, 0);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let sub = reference[i - 1] != hypothesis[j - 1];
            if step(d[(i - 1) * w + j - 1], sub) == here {
                s += usize::from(sub);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && gap(d[(i - 1) * w + j]) == here {
            del += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }
    ErrorRateBreakdown {
        substitutions: s,
        deletions: del,
        insertions: ins,
        ref_len: n,
        rate: (n > 0).then(|| (s + del + ins) as f64 / n as f64),
    }
}

/// Lowercases and removes characters that are neither alphanumeric nor
/// whitespace.
pub fn normalize_for_scoring(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Word error rate over whitespace-separated tokens; case preserved.
pub fn wer(reference: &str, hypothesis: &str) -> ErrorRateBreakdown {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    edit_distance_units(&r, &h)
}

/// Character error rate over Unicode scalar values after whitespace
/// canonicalization; spaces count as characters.
pub fn cer(reference: &str, hypothesis: &str) -> ErrorRateBreakdown {
    let canon = |t: &str| -> Vec<char> {
        t.split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .chars()
            .collect()
    };
    edit_distance_units(&canon(reference), &canon(hypothesis))
}

/// Total selected audio in hours, counting each entry `weight` times.
pub fn hours(subset: &SelectionResult, manifest: &[UtteranceRecord]) -> Result<f64> {
    let durations: HashMap<&str, f64> = manifest
        .iter()
        .map(|r| (r.utt_id.as_str(), r.duration_sec))
        .collect();
    let mut seconds = 0.0;
    for e in &subset.entries {
        let d = durations.get(e.utt_id.as_str()).ok_or_else(|| Error::Missing {
            kind: "duration",
            id: e.utt_id.clone(),
        })?;
        seconds += f64::from(e.weight) * d;
    }
    Ok(seconds / 3600.0)
}

/// Improvement rates of one perturbation configuration against the baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub pitch_semitones: i64,
    pub atempo: f64,
    pub utterances: usize,
    pub improved: usize,
    pub improvement_rate: f64,
    /// Mean baseline-minus-perturbed WER over improved utterances.
    pub mean_reduction: Option<f64>,
    pub retained: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

/// Minimum improvement rate, in percent, for a configuration to be retained.
pub const RETAIN_PERCENT: usize = 20;

/// Compares every non-baseline configuration with the baseline decode of the
/// same utterance. Utterances lacking either hypothesis are skipped for that
/// configuration.
pub fn sweep_report(
    manifest: &[UtteranceRecord],
    hyps: &[HypothesisRecord],
    normalize: bool,
) -> Result<SweepReport> {
    let refs: HashMap<&str, &UtteranceRecord> =
        manifest.iter().map(|r| (r.utt_id.as_str(), r)).collect();
    let score = |h: &HypothesisRecord| -> Result<f64> {
        let r = refs
            .get(h.utt_id.as_str())
            .and_then(|r| r.ref_text.as_deref())
            .ok_or_else(|| Error::Missing {
                kind: "reference",
                id: h.utt_id.clone(),
            })?;
        let b = if normalize {
            wer(&normalize_for_scoring(r), &normalize_for_scoring(&h.text))
        } else {
            wer(r, &h.text)
        };
        b.rate.ok_or_else(|| Error::Missing {
            kind: "non-empty reference",
            id: h.utt_id.clone(),
        })
    };
    let mut baseline: HashMap<&str, f64> = HashMap::new();
    let mut by_config: BTreeMap<PerturbationDescriptor, BTreeMap<&str, f64>> = BTreeMap::new();
    for h in hyps {
        let w = score(h)?;
        let slot = if h.perturbation.is_baseline() {
            baseline.insert(h.utt_id.as_str(), w)
        } else {
            by_config
                .entry(h.perturbation)
                .or_default()
                .insert(h.utt_id.as_str(), w)
        };
        if slot.is_some() {
            return Err(Error::DuplicateId(format!("{} {}", h.utt_id, h.perturbation)));
        }
    }
    let rows = by_config
        .into_iter()
        .map(|(d, per_utt)| {
            let (mut utterances, mut improved, mut reduction) = (0, 0, 0.0);
            for (utt, w) in per_utt {
                let Some(&w0) = baseline.get(utt) else { continue };
                utterances += 1;
                if w < w0 {
                    improved += 1;
                    reduction += w0 - w;
                }
            }
            SweepRow {
                alpha: d.alpha(),
                pitch_semitones: d.pitch_semitones(),
                atempo: d.atempo(),
                utterances,
                improved,
                improvement_rate: if utterances == 0 {
                    0.0
                } else {
                    improved as f64 / utterances as f64
                },
                mean_reduction: (improved > 0).then(|| reduction / improved as f64),
                retained: utterances > 0 && improved * 100 >= RETAIN_PERCENT * utterances,
            }
        })
        .collect();
    Ok(SweepReport { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEval {
    pub utt_id: String,
    pub hyp_id: String,
    pub weight: u32,
    pub breakdown: ErrorRateBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Total errors over total reference words; `None` if no reference words.
    pub corpus_wer: Option<f64>,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
    pub hours: f64,
    pub utterances: Vec<UtteranceEval>,
}

/// Pooled WER of the subset's transcripts against manifest references.
pub fn evaluate_subset(
    subset: &SelectionResult,
    manifest: &[UtteranceRecord],
    normalize: bool,
) -> Result<EvalSummary> {
    let refs: HashMap<&str, &UtteranceRecord> =
        manifest.iter().map(|r| (r.utt_id.as_str(), r)).collect();
    let mut utterances = Vec::with_capacity(subset.entries.len());
    for e in &subset.entries {
        let r = refs
            .get(e.utt_id.as_str())
            .and_then(|r| r.ref_text.as_deref())
            .ok_or_else(|| {
                Error::Coverage(format!("no reference text for utterance `{}`", e.utt_id))
            })?;
        let breakdown = if normalize {
            wer(&normalize_for_scoring(r), &normalize_for_scoring(&e.text))
        } else {
            wer(r, &e.text)
        };
        utterances.push(UtteranceEval {
            utt_id: e.utt_id.clone(),
            hyp_id: e.hyp_id.clone(),
            weight: e.weight,
            breakdown,
        });
    }
    let sum = |f: fn(&ErrorRateBreakdown) -> usize| -> usize {
        utterances.iter().map(|u| f(&u.breakdown)).sum()
    };
    let (s, d, i, n) = (
        sum(|b| b.substitutions),
        sum(|b| b.deletions),
        sum(|b| b.insertions),
        sum(|b| b.ref_len),
    );
    Ok(EvalSummary {
        corpus_wer: (n > 0).then(|| (s + d + i) as f64 / n as f64),
        substitutions: s,
        deletions: d,
        insertions: i,
        ref_words: n,
        hours: hours(subset, manifest)?,
        utterances,
    })
}
