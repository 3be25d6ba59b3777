//! Improvement deltas, percentile thresholds and the selection rules.
//!
//! Every rule returns a [`SelectionResult`] ordered by `utt_id`, except the
//! random control which keeps its shuffled order. Ties are broken by the
//! smallest id.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{PerturbationPool, Scored, ScoredUtterance};
use crate::corpus::{HypothesisRecord, Rule, SelectionEntry, SelectionResult, UtteranceRecord};
use crate::error::{Error, Result};
use crate::metrics::cer;

/// Percentiles explored by the budget sweep.
pub const PERCENTILES: [u32; 6] = [50, 60, 70, 80, 90, 95];

/// Hard threshold of the binary predicted-WER baseline.
pub const WER_BINARY_THRESHOLD: f64 = 0.5;

/// Improvements of one perturbed hypothesis over its baseline, oriented so
/// that positive means better.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRecord {
    pub utt_id: String,
    pub hyp_id: String,
    pub delta_w: f64,
    pub delta_c: f64,
    pub delta_d: f64,
}

impl ImprovementRecord {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Pred => self.delta_w,
            Metric::Cos => self.delta_c,
            Metric::Euc => self.delta_d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Pred,
    Cos,
    Euc,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Pred, Metric::Cos, Metric::Euc];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Pred => "pred_wer",
            Metric::Cos => "cos",
            Metric::Euc => "euc",
        }
    }

    fn single_rule(self) -> Rule {
        match self {
            Metric::Pred => Rule::PredOnly,
            Metric::Cos => Rule::CosOnly,
            Metric::Euc => Rule::EucOnly,
        }
    }
}

fn improvement(base: &Scored, hyp: &Scored) -> ImprovementRecord {
    let (b, k) = (&base.quality, &hyp.quality);
    ImprovementRecord {
        utt_id: hyp.hyp.utt_id.clone(),
        hyp_id: hyp.hyp.hyp_id.clone(),
        delta_w: b.pred_wer - k.pred_wer,
        delta_c: k.cos - b.cos,
        delta_d: b.euc - k.euc,
    }
}

fn utterance_deltas(u: &ScoredUtterance) -> Vec<ImprovementRecord> {
    u.perturbed.iter().map(|k| improvement(&u.baseline, k)).collect()
}

/// One record per (utterance, retained perturbed hypothesis).
pub fn deltas(pool: &PerturbationPool) -> Vec<ImprovementRecord> {
    pool.utterances.iter().flat_map(utterance_deltas).collect()
}

fn check_p(p: u32) -> Result<()> {
    if !(1..=100).contains(&p) {
        return Err(Error::InvalidArgument(format!("percentile {p} not in 1..=100")));
    }
    Ok(())
}

/// 1-based nearest-rank index `ceil(p * n / 100)`, at least 1.
pub fn nearest_rank_index(p: u32, n: usize) -> usize {
    ((p as usize * n).div_ceil(100)).max(1)
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[f64], p: u32) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    Some(sorted[nearest_rank_index(p, sorted.len()) - 1])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionSource {
    /// Strictly positive improvements over the perturbation pool.
    Improvement,
    /// Baseline-hypothesis quality scores.
    Baseline,
}

/// Thresholds for some metrics at percentile `p`, bound to one pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub p: u32,
    pub source: DistributionSource,
    pub tau: BTreeMap<Metric, f64>,
    pub pool_hash: String,
}

impl ThresholdSet {
    pub fn get(&self, m: Metric) -> Result<f64> {
        self.tau
            .get(&m)
            .copied()
            .ok_or_else(|| Error::Missing {
                kind: "threshold",
                id: m.name().to_string(),
            })
    }

    fn as_map(&self, prefix: &str) -> BTreeMap<String, f64> {
        self.tau
            .iter()
            .map(|(m, v)| (format!("{prefix}{}", m.name()), *v))
            .collect()
    }

    fn check(&self, pool: &PerturbationPool, source: DistributionSource) -> Result<()> {
        if self.pool_hash != pool.hash() || self.source != source {
            return Err(Error::PoolMismatch);
        }
        Ok(())
    }
}

/// Nearest-rank `p`-th percentile of the strictly positive improvements of
/// each requested metric.
pub fn improvement_thresholds(
    records: &[ImprovementRecord],
    p: u32,
    metrics: &[Metric],
) -> Result<BTreeMap<Metric, f64>> {
    check_p(p)?;
    metrics
        .iter()
        .map(|&m| {
            let positives = sorted(records.iter().map(|r| r.get(m)).filter(|&d| d > 0.0).collect());
            let tau = nearest_rank(&positives, p).ok_or(Error::EmptyDistribution(m.name()))?;
            Ok((m, tau))
        })
        .collect()
}

/// Improvement thresholds for all three metrics.
pub fn percentile_thresholds(pool: &PerturbationPool, p: u32) -> Result<ThresholdSet> {
    thresholds_for(pool, p, &Metric::ALL)
}

pub fn thresholds_for(pool: &PerturbationPool, p: u32, metrics: &[Metric]) -> Result<ThresholdSet> {
    Ok(ThresholdSet {
        p,
        source: DistributionSource::Improvement,
        tau: improvement_thresholds(&deltas(pool), p, metrics)?,
        pool_hash: pool.hash().to_string(),
    })
}

fn entry(s: &Scored) -> SelectionEntry {
    SelectionEntry {
        utt_id: s.hyp.utt_id.clone(),
        hyp_id: s.hyp.hyp_id.clone(),
        text: s.hyp.text.clone(),
        weight: 1,
    }
}

/// Per utterance, the accepted hypothesis with the largest `key`, ties by
/// smallest `hyp_id`.
fn pick_best(
    pool: &PerturbationPool,
    accept: impl Fn(&ImprovementRecord) -> bool,
    key: Metric,
) -> Vec<SelectionEntry> {
    pool.utterances
        .iter()
        .filter_map(|u| {
            u.perturbed
                .iter()
                .map(|k| (k, improvement(&u.baseline, k)))
                .filter(|(_, r)| accept(r))
                .max_by(|(a, ra), (b, rb)| {
                    ra.get(key)
                        .total_cmp(&rb.get(key))
                        .then_with(|| b.hyp.hyp_id.cmp(&a.hyp.hyp_id))
                })
                .map(|(k, _)| entry(k))
        })
        .collect()
}

/// Accepts a perturbed hypothesis iff its predicted-WER improvement and at
/// least one alignment improvement reach their thresholds.
pub fn select_conf(pool: &PerturbationPool, th: &ThresholdSet) -> Result<SelectionResult> {
    th.check(pool, DistributionSource::Improvement)?;
    let (tw, tc, td) = (th.get(Metric::Pred)?, th.get(Metric::Cos)?, th.get(Metric::Euc)?);
    let entries = pick_best(
        pool,
        |r| r.delta_w >= tw && (r.delta_c >= tc || r.delta_d >= td),
        Metric::Pred,
    );
    Ok(SelectionResult {
        rule: Rule::Conf,
        p: Some(th.p),
        p2: None,
        thresholds: th.as_map(""),
        entries,
    })
}

pub fn select_single_metric(
    pool: &PerturbationPool,
    th: &ThresholdSet,
    metric: Metric,
) -> Result<SelectionResult> {
    th.check(pool, DistributionSource::Improvement)?;
    let t = th.get(metric)?;
    let entries = pick_best(pool, |r| r.get(metric) >= t, metric);
    Ok(SelectionResult {
        rule: metric.single_rule(),
        p: Some(th.p),
        p2: None,
        thresholds: BTreeMap::from([(metric.name().to_string(), t)]),
        entries,
    })
}

/// Thresholds over the baseline-hypothesis scores: the `p`-th percentile for
/// predicted WER and distance, the `(100 - p)`-th for cosine.
pub fn baseline_thresholds(pool: &PerturbationPool, p: u32) -> Result<ThresholdSet> {
    check_p(p)?;
    if p == 100 {
        return Err(Error::InvalidArgument("percentile 100 leaves no cosine percentile".into()));
    }
    if pool.is_empty() {
        return Err(Error::InvalidArgument("empty pool".into()));
    }
    let column = |f: fn(&ScoredUtterance) -> f64| sorted(pool.utterances.iter().map(f).collect());
    let w = column(|u| u.baseline.quality.pred_wer);
    let c = column(|u| u.baseline.quality.cos);
    let d = column(|u| u.baseline.quality.euc);
    let tau = BTreeMap::from([
        (Metric::Pred, nearest_rank(&w, p).expect("nonempty")),
        (Metric::Cos, nearest_rank(&c, 100 - p).expect("nonempty")),
        (Metric::Euc, nearest_rank(&d, p).expect("nonempty")),
    ]);
    Ok(ThresholdSet {
        p,
        source: DistributionSource::Baseline,
        tau,
        pool_hash: pool.hash().to_string(),
    })
}

/// Keeps utterances whose baseline hypothesis already scores well.
pub fn select_stable_base(pool: &PerturbationPool, p: u32) -> Result<SelectionResult> {
    let th = baseline_thresholds(pool, p)?;
    select_stable_base_with(pool, &th)
}

pub fn select_stable_base_with(pool: &PerturbationPool, th: &ThresholdSet) -> Result<SelectionResult> {
    th.check(pool, DistributionSource::Baseline)?;
    let (tw, tc, td) = (th.get(Metric::Pred)?, th.get(Metric::Cos)?, th.get(Metric::Euc)?);
    let entries = pool
        .utterances
        .iter()
        .filter(|u| {
            let q = &u.baseline.quality;
            q.pred_wer <= tw && (q.cos >= tc || q.euc <= td)
        })
        .map(|u| entry(&u.baseline))
        .collect();
    Ok(SelectionResult {
        rule: Rule::StableBase,
        p: Some(th.p),
        p2: None,
        thresholds: th.as_map(""),
        entries,
    })
}

/// Union of the conf subset at `p1` and the stable-base subset at `p2`. An
/// utterance in both contributes two weight-1 entries: the perturbed
/// hypothesis first, then the baseline.
pub fn select_conf_stable(pool: &PerturbationPool, p1: u32, p2: u32) -> Result<SelectionResult> {
    let conf_th = percentile_thresholds(pool, p1)?;
    let conf = select_conf(pool, &conf_th)?;
    let stable_th = baseline_thresholds(pool, p2)?;
    let stable = select_stable_base_with(pool, &stable_th)?;
    let mut entries: Vec<SelectionEntry> = conf.entries.into_iter().chain(stable.entries).collect();
    // stable sort keeps conf before stable within an utterance
    entries.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    let mut thresholds = conf_th.as_map("conf.");
    thresholds.extend(stable_th.as_map("stable."));
    Ok(SelectionResult {
        rule: Rule::ConfStable,
        p: Some(p1),
        p2: Some(p2),
        thresholds,
        entries,
    })
}

fn baselines(hyps: &[HypothesisRecord]) -> Result<Vec<&HypothesisRecord>> {
    let mut by_utt: BTreeMap<&str, &HypothesisRecord> = BTreeMap::new();
    for h in hyps.iter().filter(|h| h.perturbation.is_baseline()) {
        if by_utt.insert(h.utt_id.as_str(), h).is_some() {
            return Err(Error::InvalidArgument(format!(
                "utterance `{}` has more than one baseline hypothesis",
                h.utt_id
            )));
        }
    }
    Ok(by_utt.into_values().collect())
}

fn hyp_entry(h: &HypothesisRecord) -> SelectionEntry {
    SelectionEntry {
        utt_id: h.utt_id.clone(),
        hyp_id: h.hyp_id.clone(),
        text: h.text.clone(),
        weight: 1,
    }
}

/// How the perplexity baseline sizes its subset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PplMode {
    /// Keep baselines with perplexity at or below the `(100 - p)`-th
    /// percentile.
    Percentile(u32),
    /// Keep exactly this many lowest-perplexity utterances.
    SizeMatched(usize),
}

/// Text-only perplexity filter over baseline hypotheses; low perplexity is
/// kept.
pub fn select_ppl(hyps: &[HypothesisRecord], mode: PplMode) -> Result<SelectionResult> {
    let base = baselines(hyps)?;
    let mut scored = Vec::with_capacity(base.len());
    for h in base {
        let ppl = h.ppl.ok_or_else(|| Error::Missing {
            kind: "ppl",
            id: h.hyp_id.clone(),
        })?;
        scored.push((ppl, h));
    }
    let mut result = SelectionResult::new(Rule::Ppl);
    let mut kept: Vec<&HypothesisRecord> = match mode {
        PplMode::Percentile(p) => {
            check_p(p)?;
            if p == 100 {
                return Err(Error::InvalidArgument("percentile 100 leaves no perplexity percentile".into()));
            }
            let values = sorted(scored.iter().map(|(v, _)| *v).collect());
            let Some(tau) = nearest_rank(&values, 100 - p) else {
                result.p = Some(p);
                return Ok(result);
            };
            result.p = Some(p);
            result.thresholds.insert("ppl".into(), tau);
            scored.iter().filter(|(v, _)| *v <= tau).map(|(_, h)| *h).collect()
        }
        PplMode::SizeMatched(k) => {
            if k > scored.len() {
                return Err(Error::BudgetTooLarge {
                    budget: k,
                    available: scored.len(),
                });
            }
            scored.sort_by(|(a, ha), (b, hb)| a.total_cmp(b).then_with(|| ha.utt_id.cmp(&hb.utt_id)));
            result.thresholds.insert("size".into(), k as f64);
            scored.iter().take(k).map(|(_, h)| *h).collect()
        }
    };
    kept.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    result.entries = kept.into_iter().map(hyp_entry).collect();
    Ok(result)
}

/// Random control at a duration budget: the utterances with a baseline
/// hypothesis are sorted by id, shuffled with ChaCha8 seeded from `seed`
/// (Fisher-Yates), and taken in shuffled order until the cumulative duration
/// first reaches `target_hours`.
pub fn select_random_hours(
    manifest: &[UtteranceRecord],
    hyps: &[HypothesisRecord],
    target_hours: f64,
    seed: u64,
) -> Result<SelectionResult> {
    if !target_hours.is_finite() || target_hours < 0.0 {
        return Err(Error::InvalidArgument(format!("target hours {target_hours}")));
    }
    let durations: HashMap<&str, f64> = manifest
        .iter()
        .map(|r| (r.utt_id.as_str(), r.duration_sec))
        .collect();
    let mut pool = baselines(hyps)?;
    let mut total = 0.0;
    for h in &pool {
        total += durations.get(h.utt_id.as_str()).ok_or_else(|| Error::Missing {
            kind: "duration",
            id: h.utt_id.clone(),
        })?;
    }
    let target = target_hours * 3600.0;
    if target > total * (1.0 + 1e-12) {
        return Err(Error::BudgetTooLarge {
            budget: target_hours.ceil() as usize,
            available: (total / 3600.0) as usize,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut entries = Vec::new();
    let mut acc = 0.0;
    for h in pool {
        if acc >= target {
            break;
        }
        acc += durations[h.utt_id.as_str()];
        entries.push(hyp_entry(h));
    }
    let mut result = SelectionResult::new(Rule::Random);
    result.thresholds.insert("hours".into(), target_hours);
    result.thresholds.insert("seed".into(), seed as f64);
    result.entries = entries;
    Ok(result)
}

fn one_per_utterance(hyps: &[HypothesisRecord]) -> Result<BTreeMap<&str, &HypothesisRecord>> {
    let mut out = BTreeMap::new();
    for h in hyps {
        if out.insert(h.utt_id.as_str(), h).is_some() {
            return Err(Error::DuplicateId(h.utt_id.clone()));
        }
    }
    Ok(out)
}

/// Mean of CER(p, z), CER(p, k) and CER(z, k), the first system of each pair
/// acting as reference. `None` if any pair has an empty reference.
pub fn cer_consistency(p: &str, z: &str, k: &str) -> Option<f64> {
    let a = cer(p, z).rate?;
    let b = cer(p, k).rate?;
    let c = cer(z, k).rate?;
    Some((a + b + c) / 3.0)
}

/// Keeps utterances on which three systems agree: mean pairwise CER strictly
/// below `tau`. Each system supplies one hypothesis per utterance and all
/// three must cover the same utterances; transcripts come from the first.
pub fn select_cer_consistency(
    systems: [&[HypothesisRecord]; 3],
    tau: f64,
) -> Result<SelectionResult> {
    if !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau {tau}")));
    }
    let [p, z, k] = systems.map(one_per_utterance);
    let (p, z, k) = (p?, z?, k?);
    for (name, other) in [("second", &z), ("third", &k)] {
        if !p.keys().eq(other.keys()) {
            return Err(Error::Coverage(format!(
                "{name} system covers different utterances than the first"
            )));
        }
    }
    let entries = p
        .iter()
        .filter(|(utt, hp)| {
            cer_consistency(&hp.text, &z[*utt].text, &k[*utt].text).is_some_and(|avg| avg < tau)
        })
        .map(|(_, h)| hyp_entry(h))
        .collect();
    let mut result = SelectionResult::new(Rule::CerConsistency);
    result.thresholds.insert("tau".into(), tau);
    result.entries = entries;
    Ok(result)
}

/// Keeps utterances whose baseline predicted WER is strictly below 0.5.
pub fn select_wer_binary(pool: &PerturbationPool) -> Result<SelectionResult> {
    let mut result = SelectionResult::new(Rule::WerBinary);
    result
        .thresholds
        .insert("pred_wer".into(), WER_BINARY_THRESHOLD);
    result.entries = pool
        .utterances
        .iter()
        .filter(|u| u.baseline.quality.pred_wer < WER_BINARY_THRESHOLD)
        .map(|u| entry(&u.baseline))
        .collect();
    Ok(result)
}
