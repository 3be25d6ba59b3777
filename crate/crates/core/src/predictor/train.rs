use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{concat_row, Mode, PredictorNet, DEFAULT_HIDDEN};
use crate::error::{Error, Result};

/// One training example: embeddings of an utterance and of a hypothesis,
/// with the hypothesis' true WER.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub speech_emb: Vec<f32>,
    pub text_emb: Vec<f32>,
    pub target_wer: f64,
}

impl LabeledPair {
    /// Clamps the target into `[0, 1]`; rejects non-finite values.
    pub fn new(speech_emb: Vec<f32>, text_emb: Vec<f32>, target_wer: f64) -> Result<Self> {
        if !target_wer.is_finite() {
            return Err(Error::NonFinite("target WER".into()));
        }
        if speech_emb.iter().chain(&text_emb).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("labeled pair embedding".into()));
        }
        Ok(LabeledPair {
            speech_emb,
            text_emb,
            target_wer: target_wer.clamp(0.0, 1.0),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            max_epochs: 70,
            patience: 10,
            dropout: 0.3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.max_epochs == 0 {
            return bad("max epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size {} below 2", self.batch_size));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("optimizer moments out of range".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {}", self.dropout));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths {:?}", self.hidden));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub dev_mse: f64,
}

/// `epochs[0]` evaluates the freshly initialized network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }
}

struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
}

impl Dataset {
    fn new(pairs: &[LabeledPair], what: &str) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("empty {what} set")))?;
        let dim = first.speech_emb.len() + first.text_emb.len();
        let mut x = Array2::zeros((pairs.len(), dim));
        for (mut row, p) in x.axis_iter_mut(Axis(0)).zip(pairs) {
            let r = concat_row(&p.speech_emb, &p.text_emb);
            if r.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            row.assign(&r);
        }
        let y = pairs.iter().map(|p| p.target_wer.clamp(0.0, 1.0)).collect();
        Ok(Dataset { x, y })
    }

    fn mse(&self, net: &PredictorNet) -> Result<f64> {
        let pred = net.forward_batch(self.x.view(), Mode::Eval)?;
        let r = pred - &self.y;
        Ok(r.mapv(|v| v * v).sum() / self.y.len() as f64)
    }
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    fn new(n: usize) -> Self {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *p -= lr * cfg.weight_decay * *p;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
}

fn cosine_lr(base: f64, epoch: usize, total: usize) -> f64 {
    base * 0.5 * (1.0 + (PI * epoch as f64 / total as f64).cos())
}

/// Trains from a seeded Xavier initialization and returns the checkpoint
/// with the lowest dev MSE.
///
/// Batch-norm running statistics are recomputed from the full training set
/// after initialization and after every epoch, so evaluation never depends
/// on the order of mini-batches.
pub fn train(
    pairs: &[LabeledPair],
    dev: &[LabeledPair],
    cfg: &TrainConfig,
) -> Result<(PredictorNet, TrainHistory)> {
    cfg.validate()?;
    let train_set = Dataset::new(pairs, "training")?;
    let dev_set = Dataset::new(dev, "dev")?;
    if dev_set.x.ncols() != train_set.x.ncols() {
        return Err(Error::DimMismatch {
            expected: train_set.x.ncols(),
            found: dev_set.x.ncols(),
        });
    }
    let mut layers = vec![train_set.x.ncols()];
    layers.extend(&cfg.hidden);
    layers.push(1);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = PredictorNet::xavier(&layers, cfg.dropout, &mut rng)?;
    net.recompute_running_stats(train_set.x.view())?;

    let evaluate = |net: &PredictorNet, epoch: usize, lr: f64| -> Result<EpochRecord> {
        let rec = EpochRecord {
            epoch,
            lr,
            train_mse: train_set.mse(net)?,
            dev_mse: dev_set.mse(net)?,
        };
        if !rec.train_mse.is_finite() || !rec.dev_mse.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite MSE after epoch {epoch} (train {}, dev {})",
                rec.train_mse, rec.dev_mse
            )));
        }
        Ok(rec)
    };

    let mut history = vec![evaluate(&net, 0, 0.0)?];
    let mut best = net.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut opt = AdamW::new(net.param_count());
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = cosine_lr(cfg.lr, epoch - 1, cfg.max_epochs);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let xb = train_set.x.select(Axis(0), chunk);
            let yb = train_set.y.select(Axis(0), chunk);
            let (loss, grads) = net.loss_and_gradients(xb.view(), yb.view(), Some(&mut rng))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite batch loss in epoch {epoch}")));
            }
            let mut params = net.flat_params();
            opt.step(&mut params, &grads.flat(), lr, cfg);
            net.set_flat_params(&params)?;
        }
        net.recompute_running_stats(train_set.x.view())?;
        if !net.is_finite() {
            return Err(Error::Numeric(format!("non-finite parameters after epoch {epoch}")));
        }
        let rec = evaluate(&net, epoch, lr)?;
        let improved = rec.dev_mse < history[best_epoch].dev_mse;
        history.push(rec);
        if improved {
            best = net.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok((
        best,
        TrainHistory {
            epochs: history,
            best_epoch,
        },
    ))
}
