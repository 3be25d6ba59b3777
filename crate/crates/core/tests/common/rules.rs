//! Brute-force versions of every selection rule over raw synthetic records.

use std::collections::{BTreeMap, HashMap, HashSet};

use consel_core::alignment::{dedup_pool, PerturbationPool};
use consel_core::corpus::{HypothesisRecord, QualityVector, SelectionResult};
use consel_core::rules::{
    baseline_thresholds, percentile_thresholds, select_cer_consistency, select_conf,
    select_conf_stable, select_ppl, select_random_hours, select_single_metric,
    select_stable_base_with, select_wer_binary, Metric, PplMode, PERCENTILES,
};
use consel_core::synth::{generate, SynthConfig, SynthData};

pub struct Row<'a> {
    pub hyp: &'a HypothesisRecord,
    pub q: &'a QualityVector,
}

pub struct Utt<'a> {
    pub base: Row<'a>,
    pub perturbed: Vec<Row<'a>>,
}

pub type Pairs = Vec<(String, String)>;

pub fn synth(n_utts: usize, seed: u64, rho: f64) -> SynthData {
    generate(&SynthConfig {
        n_utts,
        seed,
        rho,
        n_train_pairs: 4,
        n_dev_pairs: 4,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn squash(t: &str) -> String {
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Grouping and de-duplication written out directly.
pub fn oracle_pool(d: &SynthData) -> BTreeMap<String, Utt<'_>> {
    let scores: HashMap<&str, &QualityVector> =
        d.scores.iter().map(|q| (q.hyp_id.as_str(), q)).collect();
    let mut groups: BTreeMap<String, Vec<&HypothesisRecord>> = BTreeMap::new();
    for h in &d.hypotheses {
        groups.entry(h.utt_id.clone()).or_default().push(h);
    }
    let rank = |x: &HypothesisRecord| (x.perturbation.magnitude_key(), x.hyp_id.clone());
    groups
        .into_iter()
        .map(|(utt, hs)| {
            let base = *hs.iter().find(|h| h.perturbation.is_baseline()).unwrap();
            let base_text = squash(&base.text);
            let mut kept: Vec<&HypothesisRecord> = Vec::new();
            for h in hs.iter().filter(|h| !h.perturbation.is_baseline()) {
                let t = squash(&h.text);
                if t == base_text {
                    continue;
                }
                match kept.iter().position(|k| squash(&k.text) == t) {
                    Some(i) if rank(h) < rank(kept[i]) => kept[i] = h,
                    Some(_) => {}
                    None => kept.push(h),
                }
            }
            let u = Utt {
                base: Row { hyp: base, q: scores[base.hyp_id.as_str()] },
                perturbed: kept
                    .into_iter()
                    .map(|h| Row { hyp: h, q: scores[h.hyp_id.as_str()] })
                    .collect(),
            };
            (utt, u)
        })
        .collect()
}

pub fn library_pool(d: &SynthData) -> PerturbationPool {
    PerturbationPool::new(&dedup_pool(&d.hypotheses).unwrap(), &d.scores).unwrap()
}

/// [delta_w, delta_c, delta_d]
pub fn delta(base: &QualityVector, k: &QualityVector) -> [f64; 3] {
    [base.pred_wer - k.pred_wer, k.cos - base.cos, base.euc - k.euc]
}

/// Nearest rank computed in floating point.
pub fn rank(p: u32, values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((p as f64 * values.len() as f64) / 100.0).ceil().max(1.0) as usize;
    values[idx - 1]
}

pub fn improvement_taus(pool: &BTreeMap<String, Utt<'_>>, p: u32) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (m, slot) in out.iter_mut().enumerate() {
        let mut pos: Vec<f64> = pool
            .values()
            .flat_map(|u| u.perturbed.iter().map(|k| delta(u.base.q, k.q)[m]))
            .filter(|&v| v > 0.0)
            .collect();
        *slot = rank(p, &mut pos);
    }
    out
}

/// Best accepted hypothesis per utterance by `key`, ties to smaller id.
pub fn oracle_pick(pool: &BTreeMap<String, Utt<'_>>, accept: impl Fn(&[f64; 3]) -> bool, key: usize) -> Pairs {
    let mut out = Vec::new();
    for (utt, u) in pool {
        let mut best: Option<(f64, &str)> = None;
        for k in &u.perturbed {
            let dl = delta(u.base.q, k.q);
            if !accept(&dl) {
                continue;
            }
            let better = match best {
                None => true,
                Some((v, id)) => dl[key] > v || (dl[key] == v && k.hyp.hyp_id.as_str() < id),
            };
            if better {
                best = Some((dl[key], &k.hyp.hyp_id));
            }
        }
        if let Some((_, id)) = best {
            out.push((utt.clone(), id.to_string()));
        }
    }
    out
}

pub fn oracle_conf(pool: &BTreeMap<String, Utt<'_>>, p: u32) -> Pairs {
    let tau = improvement_taus(pool, p);
    oracle_pick(pool, |dl| dl[0] >= tau[0] && (dl[1] >= tau[1] || dl[2] >= tau[2]), 0)
}

pub fn oracle_stable(pool: &BTreeMap<String, Utt<'_>>, p: u32) -> Pairs {
    let col = |f: fn(&QualityVector) -> f64| pool.values().map(|u| f(u.base.q)).collect::<Vec<_>>();
    let tw = rank(p, &mut col(|q| q.pred_wer));
    let tc = rank(100 - p, &mut col(|q| q.cos));
    let td = rank(p, &mut col(|q| q.euc));
    pool.iter()
        .filter(|(_, u)| u.base.q.pred_wer <= tw && (u.base.q.cos >= tc || u.base.q.euc <= td))
        .map(|(utt, u)| (utt.clone(), u.base.hyp.hyp_id.clone()))
        .collect()
}

pub fn pairs(r: &SelectionResult) -> Pairs {
    r.entries.iter().map(|e| (e.utt_id.clone(), e.hyp_id.clone())).collect()
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(ca != cb)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

pub fn oracle_cer(r: &str, h: &str) -> f64 {
    let r: Vec<char> = squash(r).chars().collect();
    let h: Vec<char> = squash(h).chars().collect();
    levenshtein(&r, &h) as f64 / r.len() as f64
}

fn err(e: consel_core::Error) -> String {
    e.to_string()
}

pub fn check_dedup(d: &SynthData) -> Result<usize, String> {
    let oracle = oracle_pool(d);
    let lib = library_pool(d);
    ensure!(lib.utterances.len() == oracle.len(), "utterance count {} vs {}", lib.utterances.len(), oracle.len());
    for u in &lib.utterances {
        let o = &oracle[&u.utt_id];
        ensure!(u.baseline.hyp.hyp_id == o.base.hyp.hyp_id, "{}: baseline differs", u.utt_id);
        let lib_ids: HashSet<&str> = u.perturbed.iter().map(|s| s.hyp.hyp_id.as_str()).collect();
        let o_ids: HashSet<&str> = o.perturbed.iter().map(|r| r.hyp.hyp_id.as_str()).collect();
        ensure!(lib_ids == o_ids, "{}: retained hypotheses differ", u.utt_id);
    }
    Ok(1)
}

pub fn check_improvement_rules(d: &SynthData) -> Result<usize, String> {
    let oracle = oracle_pool(d);
    let pool = library_pool(d);
    let mut n = 0;
    for p in PERCENTILES {
        let tau = improvement_taus(&oracle, p);
        let th = percentile_thresholds(&pool, p).map_err(err)?;
        for (i, m) in Metric::ALL.iter().enumerate() {
            let got = th.get(*m).map_err(err)?;
            ensure!(got == tau[i], "p {p} {}: threshold {got} vs {}", m.name(), tau[i]);
        }
        let got = pairs(&select_conf(&pool, &th).map_err(err)?);
        ensure!(got == oracle_conf(&oracle, p), "conf p {p}: subsets differ");
        n += 1;
        for (i, m) in Metric::ALL.iter().enumerate() {
            let want = oracle_pick(&oracle, |dl| dl[i] >= tau[i], i);
            let got = pairs(&select_single_metric(&pool, &th, *m).map_err(err)?);
            ensure!(got == want, "{} p {p}: subsets differ", m.name());
            n += 1;
        }
    }
    Ok(n)
}

pub fn check_baseline_rules(d: &SynthData) -> Result<usize, String> {
    let oracle = oracle_pool(d);
    let pool = library_pool(d);
    let mut n = 0;
    for p in PERCENTILES {
        let th = baseline_thresholds(&pool, p).map_err(err)?;
        let got = pairs(&select_stable_base_with(&pool, &th).map_err(err)?);
        ensure!(got == oracle_stable(&oracle, p), "stable-base p {p}: subsets differ");
        n += 1;
    }
    for (p1, p2) in [(50, 50), (90, 60), (95, 95)] {
        let conf = oracle_conf(&oracle, p1);
        let stable = oracle_stable(&oracle, p2);
        let mut want: Pairs = Vec::new();
        for utt in oracle.keys() {
            want.extend(conf.iter().filter(|(u, _)| u == utt).cloned());
            want.extend(stable.iter().filter(|(u, _)| u == utt).cloned());
        }
        let got = select_conf_stable(&pool, p1, p2).map_err(err)?;
        ensure!(pairs(&got) == want, "conf-stable p1 {p1} p2 {p2}: subsets differ");
        ensure!(got.entries.iter().all(|e| e.weight == 1), "conf-stable weight != 1");
        n += 1;
    }
    let want: Pairs = oracle
        .iter()
        .filter(|(_, u)| u.base.q.pred_wer < 0.5)
        .map(|(utt, u)| (utt.clone(), u.base.hyp.hyp_id.clone()))
        .collect();
    ensure!(pairs(&select_wer_binary(&pool).map_err(err)?) == want, "wer-binary: subsets differ");
    Ok(n + 1)
}

pub fn check_ppl(d: &SynthData) -> Result<usize, String> {
    let mut base: Vec<(&str, &str, f64)> = d
        .hypotheses
        .iter()
        .filter(|h| h.perturbation.is_baseline())
        .map(|h| (h.utt_id.as_str(), h.hyp_id.as_str(), h.ppl.unwrap()))
        .collect();
    base.sort_by(|a, b| a.0.cmp(b.0));
    let mut n = 0;
    for p in PERCENTILES {
        let tau = rank(100 - p, &mut base.iter().map(|b| b.2).collect::<Vec<_>>());
        let want: Pairs = base
            .iter()
            .filter(|b| b.2 <= tau)
            .map(|b| (b.0.to_string(), b.1.to_string()))
            .collect();
        let got = pairs(&select_ppl(&d.hypotheses, PplMode::Percentile(p)).map_err(err)?);
        ensure!(got == want, "ppl p {p}: subsets differ");
        n += 1;
    }
    let mut by_ppl = base.clone();
    by_ppl.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap().then(a.0.cmp(b.0)));
    for k in [0, 1, base.len() / 3, base.len()] {
        let mut want: Pairs = by_ppl[..k].iter().map(|b| (b.0.to_string(), b.1.to_string())).collect();
        want.sort();
        let got = pairs(&select_ppl(&d.hypotheses, PplMode::SizeMatched(k)).map_err(err)?);
        ensure!(got == want, "ppl size {k}: subsets differ");
        n += 1;
    }
    Ok(n)
}

pub fn check_cer(d: &SynthData) -> Result<usize, String> {
    let primary: Vec<HypothesisRecord> =
        d.hypotheses.iter().filter(|h| h.perturbation.is_baseline()).cloned().collect();
    let text = |set: &[HypothesisRecord]| -> HashMap<String, String> {
        set.iter().map(|h| (h.utt_id.clone(), h.text.clone())).collect()
    };
    let (z, k) = (text(&d.system_z), text(&d.system_k));
    let mut avgs: Vec<(String, String, f64)> = primary
        .iter()
        .map(|h| {
            let (zu, ku) = (&z[&h.utt_id], &k[&h.utt_id]);
            let avg = (oracle_cer(&h.text, zu) + oracle_cer(&h.text, ku) + oracle_cer(zu, ku)) / 3.0;
            (h.utt_id.clone(), h.hyp_id.clone(), avg)
        })
        .collect();
    avgs.sort_by(|a, b| a.0.cmp(&b.0));
    let taus = [0.0, 0.05, 0.1, 0.25, 1.0];
    for tau in taus {
        let want: Pairs = avgs.iter().filter(|a| a.2 < tau).map(|a| (a.0.clone(), a.1.clone())).collect();
        let got = select_cer_consistency([&primary, &d.system_z, &d.system_k], tau).map_err(err)?;
        ensure!(pairs(&got) == want, "cer tau {tau}: subsets differ");
    }
    Ok(taus.len())
}

/// Random control: shuffle written out as Fisher-Yates over the sorted
/// baseline utterances, then the shortest prefix reaching the target.
pub fn check_random(d: &SynthData) -> Result<usize, String> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let dur: HashMap<&str, f64> = d.manifest.iter().map(|u| (u.utt_id.as_str(), u.duration_sec)).collect();
    let mut base: Vec<&HypothesisRecord> =
        d.hypotheses.iter().filter(|h| h.perturbation.is_baseline()).collect();
    base.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    let total: f64 = base.iter().map(|h| dur[h.utt_id.as_str()]).sum();
    let mut n = 0;
    for seed in [0u64, 3, 11] {
        for hours in [0.0, 0.05, 0.2 * total / 3600.0, total / 3600.0] {
            let mut order = base.clone();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut want = Vec::new();
            let mut acc = 0.0;
            for h in order {
                if acc >= hours * 3600.0 {
                    break;
                }
                acc += dur[h.utt_id.as_str()];
                want.push((h.utt_id.clone(), h.hyp_id.clone()));
            }
            let got = select_random_hours(&d.manifest, &d.hypotheses, hours, seed).map_err(err)?;
            ensure!(pairs(&got) == want, "random seed {seed} hours {hours}: subsets differ");
            n += 1;
        }
    }
    Ok(n)
}

/// Every rule on one synthetic pool; returns the number of comparisons.
pub fn check_all(d: &SynthData) -> Result<usize, String> {
    Ok(check_dedup(d)?
        + check_improvement_rules(d)?
        + check_baseline_rules(d)?
        + check_ppl(d)?
        + check_cer(d)?
        + check_random(d)?)
}
