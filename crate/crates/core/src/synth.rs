//! Deterministic synthetic corpora with planted true WERs.
//!
//! Each artifact draws from its own ChaCha8 stream of the same seed, so
//! changing how one artifact is generated leaves the others untouched.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::alignment::{cosine, euclidean};
use crate::corpus::{
    write_embeddings, write_hypotheses, write_jsonl, write_manifest, write_scores, EmbeddingMatrix,
    HypothesisRecord, PerturbationDescriptor, QualityVector, Split, UtteranceRecord,
};
use crate::error::{Error, Result};
use crate::metrics::wer;
use crate::mfcc::MFCC_DIM;
use crate::predictor::{
    sigmoid, write_labeled_pairs, LabeledPair, PairFiles, OUTPUT_FLOOR, OUTPUT_SPAN,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_utts: usize,
    pub n_query: usize,
    pub seed: u64,
    /// Signal strength in [0, 1]; 1 makes predicted WER equal the truth.
    pub rho: f64,
    /// Standard deviation of the noise term of predicted WER.
    pub noise_sd: f64,
    pub min_duration: f64,
    pub max_duration: f64,
    pub vocab_size: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub emb_dim: usize,
    pub n_clusters: usize,
    pub query_clusters: usize,
    pub n_train_pairs: usize,
    pub n_dev_pairs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_utts: 200,
            n_query: 40,
            seed: 0,
            rho: 0.8,
            noise_sd: 0.25,
            min_duration: 2.0,
            max_duration: 10.0,
            vocab_size: 500,
            min_words: 4,
            max_words: 12,
            emb_dim: 16,
            n_clusters: 8,
            query_clusters: 2,
            n_train_pairs: 2000,
            n_dev_pairs: 400,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho {} not in [0, 1]", self.rho));
        }
        if self.n_utts == 0 {
            return bad("n_utts must be at least 1".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd {}", self.noise_sd));
        }
        if !(0.0 < self.min_duration && self.min_duration <= self.max_duration) {
            return bad("duration range".into());
        }
        if self.vocab_size < 2 || self.min_words == 0 || self.min_words > self.max_words {
            return bad("vocabulary or sentence length range".into());
        }
        if self.emb_dim < 2 {
            return bad("emb_dim must be at least 2".into());
        }
        if self.n_clusters == 0 || self.query_clusters == 0 || self.query_clusters > self.n_clusters {
            return bad("cluster counts".into());
        }
        Ok(())
    }
}

/// Planted true WER of one hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub utt_id: String,
    pub hyp_id: String,
    pub true_wer: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub manifest: Vec<UtteranceRecord>,
    pub hypotheses: Vec<HypothesisRecord>,
    pub scores: Vec<QualityVector>,
    pub truth: Vec<TruthRecord>,
    pub speech: EmbeddingMatrix,
    pub text: EmbeddingMatrix,
    pub pool_features: EmbeddingMatrix,
    pub query_features: EmbeddingMatrix,
    /// Two further single-hypothesis systems for the consistency baseline.
    pub system_z: Vec<HypothesisRecord>,
    pub system_k: Vec<HypothesisRecord>,
    pub train_pairs: Vec<LabeledPair>,
    pub dev_pairs: Vec<LabeledPair>,
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum Stream {
    Manifest = 1,
    Texts = 2,
    Scores = 3,
    Embeddings = 4,
    Features = 5,
    Pairs = 6,
    Ppl = 7,
    Systems = 8,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn word(i: usize) -> String {
    format!("w{i:04}")
}

fn sentence(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<String> {
    let len = rng.random_range(cfg.min_words..=cfg.max_words);
    (0..len).map(|_| word(rng.random_range(0..cfg.vocab_size))).collect()
}

/// Replaces `count` distinct positions with a different vocabulary word.
fn corrupt(words: &[String], count: usize, rng: &mut ChaCha8Rng, vocab: usize) -> Vec<String> {
    let mut out = words.to_vec();
    let positions = rand::seq::index::sample(rng, words.len(), count.min(words.len()));
    for pos in positions {
        loop {
            let w = word(rng.random_range(0..vocab));
            if w != out[pos] {
                out[pos] = w;
                break;
            }
        }
    }
    out
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// A unit vector at angle `theta` from the unit vector `base`.
fn rotate_away(base: &[f64], theta: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let r = unit_vector(rng, base.len());
        let dot: f64 = r.iter().zip(base).map(|(a, b)| a * b).sum();
        let ortho: Vec<f64> = r.iter().zip(base).map(|(a, b)| a - dot * b).collect();
        let n = ortho.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return base
                .iter()
                .zip(&ortho)
                .map(|(b, o)| theta.cos() * b + theta.sin() * o / n)
                .collect();
        }
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Labeled pairs whose target follows a planted single-index model
/// `0.01 + 0.98 * sigmoid(w . x)` over the concatenated embeddings.
pub fn planted_pairs(n: usize, half_dim: usize, seed: u64) -> (Vec<LabeledPair>, Vec<f64>) {
    let mut rng = stream(seed, Stream::Pairs);
    let scale = 2.0 / ((2 * half_dim) as f64).sqrt();
    let w: Vec<f64> = (0..2 * half_dim).map(|_| normal(&mut rng) * scale).collect();
    let pairs = (0..n)
        .map(|_| {
            let s: Vec<f32> = (0..half_dim).map(|_| normal(&mut rng) as f32).collect();
            let t: Vec<f32> = (0..half_dim).map(|_| normal(&mut rng) as f32).collect();
            let z: f64 = s.iter().chain(&t).zip(&w).map(|(&x, wi)| f64::from(x) * wi).sum();
            LabeledPair::new(s, t, OUTPUT_FLOOR + OUTPUT_SPAN * sigmoid(z)).expect("finite")
        })
        .collect();
    (pairs, w)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let descriptors = PerturbationDescriptor::all_selected();

    let mut m_rng = stream(cfg.seed, Stream::Manifest);
    let mut t_rng = stream(cfg.seed, Stream::Texts);
    let mut s_rng = stream(cfg.seed, Stream::Scores);
    let mut e_rng = stream(cfg.seed, Stream::Embeddings);
    let mut p_rng = stream(cfg.seed, Stream::Ppl);
    let mut y_rng = stream(cfg.seed, Stream::Systems);

    let mut manifest = Vec::with_capacity(cfg.n_utts + cfg.n_query);
    let mut hypotheses = Vec::with_capacity(cfg.n_utts * descriptors.len());
    let mut scores = Vec::with_capacity(hypotheses.capacity());
    let mut truth = Vec::with_capacity(hypotheses.capacity());
    let mut speech = EmbeddingMatrix::new(cfg.emb_dim)?;
    let mut text = EmbeddingMatrix::new(cfg.emb_dim)?;
    let mut system_z = Vec::with_capacity(cfg.n_utts);
    let mut system_k = Vec::with_capacity(cfg.n_utts);

    let width = cfg.n_utts.max(1).to_string().len().max(5);
    for u in 0..cfg.n_utts {
        let utt_id = format!("utt{u:0width$}");
        let reference = sentence(&mut t_rng, cfg);
        let ref_text = reference.join(" ");
        manifest.push(UtteranceRecord {
            utt_id: utt_id.clone(),
            duration_sec: m_rng.random_range(cfg.min_duration..=cfg.max_duration),
            audio_path: None,
            ref_text: Some(ref_text.clone()),
            split: Split::Pool,
        });
        let sp = unit_vector(&mut e_rng, cfg.emb_dim);
        let sp32 = to_f32(&sp);
        speech.push(utt_id.clone(), &sp32)?;

        let mut baseline_text = String::new();
        for (k, d) in descriptors.iter().enumerate() {
            let hyp_id = format!("{utt_id}-h{k:02}");
            let u_k: f64 = t_rng.random();
            let subs = (u_k * reference.len() as f64).round() as usize;
            let hyp_text = corrupt(&reference, subs, &mut t_rng, cfg.vocab_size).join(" ");
            let t = wer(&ref_text, &hyp_text).rate.expect("nonempty reference").clamp(0.0, 1.0);

            let noise = 0.5 + cfg.noise_sd * normal(&mut s_rng);
            let pred_wer = (cfg.rho * t + (1.0 - cfg.rho) * noise).clamp(OUTPUT_FLOOR, 0.99);
            let other: f64 = e_rng.random();
            let theta = FRAC_PI_2 * (cfg.rho * t + (1.0 - cfg.rho) * other);
            let tx32 = to_f32(&rotate_away(&sp, theta, &mut e_rng));
            text.push(hyp_id.clone(), &tx32)?;

            let ppl = d.is_baseline().then(|| {
                let n: f64 = p_rng.random();
                10.0 + 90.0 * (0.5 * t + 0.5 * n)
            });
            if d.is_baseline() {
                baseline_text = hyp_text.clone();
            }
            scores.push(QualityVector {
                utt_id: utt_id.clone(),
                hyp_id: hyp_id.clone(),
                pred_wer,
                cos: cosine(&sp32, &tx32)?,
                euc: euclidean(&sp32, &tx32)?,
            });
            truth.push(TruthRecord {
                utt_id: utt_id.clone(),
                hyp_id: hyp_id.clone(),
                true_wer: t,
            });
            hypotheses.push(HypothesisRecord {
                utt_id: utt_id.clone(),
                hyp_id,
                text: hyp_text,
                perturbation: *d,
                ppl,
            });
        }
        let base_words: Vec<String> = baseline_text.split(' ').map(String::from).collect();
        for (sys, out) in [("z", &mut system_z), ("k", &mut system_k)] {
            let c = if y_rng.random::<f64>() < 0.5 { 0 } else { y_rng.random_range(1..=2) };
            out.push(HypothesisRecord {
                utt_id: utt_id.clone(),
                hyp_id: format!("{utt_id}-{sys}"),
                text: corrupt(&base_words, c, &mut y_rng, cfg.vocab_size).join(" "),
                perturbation: PerturbationDescriptor::BASELINE,
                ppl: None,
            });
        }
    }

    let mut f_rng = stream(cfg.seed, Stream::Features);
    let centers: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|_| (0..MFCC_DIM).map(|_| 3.0 * normal(&mut f_rng)).collect())
        .collect();
    let feature = |cluster: usize, rng: &mut ChaCha8Rng| -> Vec<f32> {
        centers[cluster].iter().map(|c| (c + normal(rng)) as f32).collect()
    };
    let mut pool_features = EmbeddingMatrix::new(MFCC_DIM)?;
    for r in &manifest {
        let c = f_rng.random_range(0..cfg.n_clusters);
        pool_features.push(r.utt_id.clone(), &feature(c, &mut f_rng))?;
    }
    let mut query_features = EmbeddingMatrix::new(MFCC_DIM)?;
    for q in 0..cfg.n_query {
        let utt_id = format!("qry{q:0width$}");
        let c = f_rng.random_range(0..cfg.query_clusters);
        query_features.push(utt_id.clone(), &feature(c, &mut f_rng))?;
        manifest.push(UtteranceRecord {
            utt_id,
            duration_sec: f_rng.random_range(cfg.min_duration..=cfg.max_duration),
            audio_path: None,
            ref_text: None,
            split: Split::Query,
        });
    }

    let (mut pairs, _) = planted_pairs(cfg.n_train_pairs + cfg.n_dev_pairs, cfg.emb_dim, cfg.seed);
    let dev_pairs = pairs.split_off(cfg.n_train_pairs);

    Ok(SynthData {
        manifest,
        hypotheses,
        scores,
        truth,
        speech,
        text,
        pool_features,
        query_features,
        system_z,
        system_k,
        train_pairs: pairs,
        dev_pairs,
    })
}

/// File names written by [`write_synth`], relative to the output directory.
pub mod files {
    pub const MANIFEST: &str = "manifest.jsonl";
    pub const HYPOTHESES: &str = "hyps.jsonl";
    pub const SCORES: &str = "scores.jsonl";
    pub const TRUTH: &str = "truth.jsonl";
    pub const SPEECH: &str = "speech.emb";
    pub const TEXT: &str = "text.emb";
    pub const POOL_FEATURES: &str = "pool_features.emb";
    pub const QUERY_FEATURES: &str = "query_features.emb";
    pub const SYSTEM_Z: &str = "system_z.jsonl";
    pub const SYSTEM_K: &str = "system_k.jsonl";
    pub const TRAIN_SPEECH: &str = "train_speech.emb";
    pub const TRAIN_TEXT: &str = "train_text.emb";
    pub const TRAIN_TARGETS: &str = "train_targets.jsonl";
    pub const DEV_SPEECH: &str = "dev_speech.emb";
    pub const DEV_TEXT: &str = "dev_text.emb";
    pub const DEV_TARGETS: &str = "dev_targets.jsonl";
}

pub fn write_synth(data: &SynthData, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_manifest(dir.join(files::MANIFEST), &data.manifest)?;
    write_hypotheses(dir.join(files::HYPOTHESES), &data.hypotheses)?;
    write_scores(dir.join(files::SCORES), &data.scores)?;
    write_jsonl(dir.join(files::TRUTH), &data.truth)?;
    write_embeddings(&data.speech, dir.join(files::SPEECH))?;
    write_embeddings(&data.text, dir.join(files::TEXT))?;
    write_embeddings(&data.pool_features, dir.join(files::POOL_FEATURES))?;
    write_embeddings(&data.query_features, dir.join(files::QUERY_FEATURES))?;
    write_hypotheses(dir.join(files::SYSTEM_Z), &data.system_z)?;
    write_hypotheses(dir.join(files::SYSTEM_K), &data.system_k)?;
    for (pairs, prefix, [s, t, y]) in [
        (&data.train_pairs, "train", [files::TRAIN_SPEECH, files::TRAIN_TEXT, files::TRAIN_TARGETS]),
        (&data.dev_pairs, "dev", [files::DEV_SPEECH, files::DEV_TEXT, files::DEV_TARGETS]),
    ] {
        let ids: Vec<String> = (0..pairs.len()).map(|i| format!("{prefix}{i:06}")).collect();
        let (s, t, y) = (dir.join(s), dir.join(t), dir.join(y));
        let files = PairFiles {
            speech: &s,
            text: &t,
            targets: &y,
        };
        write_labeled_pairs(&ids, pairs, files)?;
    }
    Ok(())
}
