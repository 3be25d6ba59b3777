//! Reference-free sentence-level WER predictor.
//!
//! An MLP over the concatenated speech and text embeddings. Each hidden block
//! is BatchNorm -> Linear -> ReLU -> Dropout; the output is a plain affine map
//! to a scalar `z`, squashed to `0.01 + 0.98 * sigmoid(z / beta)` with a
//! learnable temperature `beta = exp(log_beta)`.

mod pairs;
mod report;
mod train;
mod weights;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use pairs::{read_labeled_pairs, write_labeled_pairs, PairFiles, TargetRecord};
pub use report::{predictor_report, PredictorReport};
pub use train::{train, EpochRecord, LabeledPair, TrainConfig, TrainHistory};
pub use weights::{load_weights, load_weights_expecting, save_weights};

pub const OUTPUT_FLOOR: f64 = 0.01;
pub const OUTPUT_SPAN: f64 = 0.98;
pub const BN_EPS: f64 = 1e-5;
pub const DEFAULT_HIDDEN: [usize; 2] = [600, 32];

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn identity(width: usize) -> Self {
        BatchNorm {
            scale: Array1::ones(width),
            shift: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenBlock {
    pub norm: BatchNorm,
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorNet {
    /// Layer widths, input first, ending in 1.
    layers: Vec<usize>,
    pub blocks: Vec<HiddenBlock>,
    /// `1 x last_hidden`.
    pub out_weight: Array2<f64>,
    pub out_bias: f64,
    pub log_beta: f64,
    pub dropout: f64,
}

/// How a forward pass treats batch-norm and dropout.
pub enum Mode<'a> {
    /// Running statistics, no dropout.
    Eval,
    /// Batch statistics; dropout masks drawn from the given generator.
    Train(&'a mut ChaCha8Rng),
}

/// Per-block activations kept for backpropagation.
struct BlockCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    affine_in: Array2<f64>,
    pre: Array2<f64>,
    mask: Option<Array2<f64>>,
}

struct ForwardCache {
    blocks: Vec<BlockCache>,
    last_hidden: Array2<f64>,
    z: Array1<f64>,
    out: Array1<f64>,
}

/// Gradient of the batch loss with the same layout as the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<BlockGradients>,
    pub out_weight: Array2<f64>,
    pub out_bias: f64,
    pub log_beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockGradients {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Gradients {
    /// Flattened in [`PredictorNet::flat_params`] order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.scale.iter());
            out.extend(b.shift.iter());
            out.extend(b.weight.iter());
            out.extend(b.bias.iter());
        }
        out.extend(self.out_weight.iter());
        out.push(self.out_bias);
        out.push(self.log_beta);
        out
    }
}

fn validate_layers(layers: &[usize]) -> Result<()> {
    if layers.len() < 2 || layers.last() != Some(&1) || layers.contains(&0) {
        return Err(Error::ShapeMismatch(format!(
            "layer widths {layers:?} must be positive and end in 1"
        )));
    }
    Ok(())
}

impl PredictorNet {
    /// All parameters zero except batch-norm scales (one) and running
    /// variances (one); `beta = 1`.
    pub fn zeros(layers: &[usize], dropout: f64) -> Result<Self> {
        validate_layers(layers)?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!("dropout {dropout} not in [0, 1)")));
        }
        let hidden = &layers[..layers.len() - 1];
        let blocks = hidden
            .windows(2)
            .map(|w| HiddenBlock {
                norm: BatchNorm::identity(w[0]),
                weight: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(PredictorNet {
            layers: layers.to_vec(),
            blocks,
            out_weight: Array2::zeros((1, hidden[hidden.len() - 1])),
            out_bias: 0.0,
            log_beta: 0.0,
            dropout,
        })
    }

    /// Xavier-uniform linear weights, zero biases, identity batch-norm.
    pub fn xavier(layers: &[usize], dropout: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(layers, dropout)?;
        let mut init = |w: &mut Array2<f64>| {
            let (fan_out, fan_in) = w.dim();
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-a..=a));
        };
        for b in &mut net.blocks {
            init(&mut b.weight);
        }
        init(&mut net.out_weight);
        Ok(net)
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictor input".into()));
        }
        Ok(())
    }

    fn forward_cached(&self, x: ArrayView2<f64>, mut mode: Mode<'_>) -> ForwardCache {
        let batch = x.nrows() as f64;
        let mut h = x.to_owned();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (mean, var) = match mode {
                Mode::Eval => (
                    block.norm.running_mean.clone(),
                    block.norm.running_var.clone(),
                ),
                Mode::Train(_) => {
                    let mean = h.sum_axis(Axis(0)) / batch;
                    let centered = &h - &mean;
                    let var = (&centered * &centered).sum_axis(Axis(0)) / batch;
                    (mean, var)
                }
            };
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let normalized = (&h - &mean) * &inv_std;
            let affine_in = &normalized * &block.norm.scale + &block.norm.shift;
            let pre = affine_in.dot(&block.weight.t()) + &block.bias;
            let mut act = pre.mapv(|v| v.max(0.0));
            let mask = match &mut mode {
                Mode::Train(rng) if self.dropout > 0.0 => {
                    let keep = 1.0 - self.dropout;
                    let m = act.mapv(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                    act *= &m;
                    Some(m)
                }
                _ => None,
            };
            caches.push(BlockCache {
                normalized,
                inv_std,
                affine_in,
                pre,
                mask,
            });
            h = act;
        }
        let z = h.dot(&self.out_weight.row(0)) + self.out_bias;
        let beta = self.beta();
        let out = z.mapv(|z| OUTPUT_FLOOR + OUTPUT_SPAN * sigmoid(z / beta));
        ForwardCache {
            blocks: caches,
            last_hidden: h,
            z,
            out,
        }
    }

    /// Predictions for each row of `x` (concatenated speech | text).
    pub fn forward_batch(&self, x: ArrayView2<f64>, mode: Mode<'_>) -> Result<Array1<f64>> {
        self.check_input(&x)?;
        Ok(self.forward_cached(x, mode).out)
    }

    /// Predicted WER of one (speech, text) pair.
    pub fn forward(&self, speech: &[f32], text: &[f32], mode: Mode<'_>) -> Result<f64> {
        let x = concat_row(speech, text);
        let x = x.view().insert_axis(Axis(0));
        Ok(self.forward_batch(x, mode)?[0])
    }

    /// Eval-mode prediction.
    pub fn predict(&self, speech: &[f32], text: &[f32]) -> Result<f64> {
        self.forward(speech, text, Mode::Eval)
    }

    /// Batch MSE in train mode and its exact gradient with respect to every
    /// parameter. `rng` is required when dropout is enabled.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        targets: ArrayView1<f64>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        self.check_input(&x)?;
        let b = x.nrows();
        if b < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch size {b} too small for batch statistics"
            )));
        }
        if targets.len() != b {
            return Err(Error::DimMismatch {
                expected: b,
                found: targets.len(),
            });
        }
        let mut scratch;
        let rng = match rng {
            Some(r) => r,
            None if self.dropout == 0.0 => {
                use rand::SeedableRng;
                scratch = ChaCha8Rng::seed_from_u64(0);
                &mut scratch
            }
            None => {
                return Err(Error::InvalidArgument(
                    "dropout is enabled but no generator was given".into(),
                ))
            }
        };
        let cache = self.forward_cached(x, Mode::Train(rng));
        let bf = b as f64;
        let residual = &cache.out - &targets;
        let loss = residual.mapv(|r| r * r).sum() / bf;

        let beta = self.beta();
        let mut d_log_beta = 0.0;
        let dz: Array1<f64> = residual
            .iter()
            .zip(&cache.z)
            .map(|(&r, &z)| {
                let d_out = 2.0 * r / bf;
                let s = sigmoid(z / beta);
                let d_arg = d_out * OUTPUT_SPAN * s * (1.0 - s);
                // d(z / exp(l)) / dl = -z / beta
                d_log_beta += d_arg * (-z / beta);
                d_arg / beta
            })
            .collect();

        let out_weight = dz
            .view()
            .insert_axis(Axis(0))
            .dot(&cache.last_hidden);
        let out_bias = dz.sum();
        let mut dh = dz
            .view()
            .insert_axis(Axis(1))
            .dot(&self.out_weight);

        let mut grads = Vec::with_capacity(self.blocks.len());
        for (block, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let mut d_pre = dh;
            if let Some(mask) = &c.mask {
                d_pre *= mask;
            }
            d_pre.zip_mut_with(&c.pre, |d, &p| {
                if p <= 0.0 {
                    *d = 0.0;
                }
            });
            let weight = d_pre.t().dot(&c.affine_in);
            let bias = d_pre.sum_axis(Axis(0));
            let d_affine = d_pre.dot(&block.weight);
            let scale = (&d_affine * &c.normalized).sum_axis(Axis(0));
            let shift = d_affine.sum_axis(Axis(0));
            let d_norm = &d_affine * &block.norm.scale;
            let sum_d = d_norm.sum_axis(Axis(0));
            let sum_dx = (&d_norm * &c.normalized).sum_axis(Axis(0));
            let d_in = ((&d_norm * bf) - &sum_d - &(&c.normalized * &sum_dx)) * &(&c.inv_std / bf);
            grads.push(BlockGradients {
                scale,
                shift,
                weight,
                bias,
            });
            dh = d_in;
        }
        grads.reverse();
        Ok((
            loss,
            Gradients {
                blocks: grads,
                out_weight,
                out_bias,
                log_beta: d_log_beta,
            },
        ))
    }

    /// Trainable parameters in a fixed order: per block (scale, shift,
    /// weight row-major, bias), then output weight, output bias, log beta.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in &self.blocks {
            out.extend(b.norm.scale.iter());
            out.extend(b.norm.shift.iter());
            out.extend(b.weight.iter());
            out.extend(b.bias.iter());
        }
        out.extend(self.out_weight.iter());
        out.push(self.out_bias);
        out.push(self.log_beta);
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimMismatch {
                expected: self.param_count(),
                found: params.len(),
            });
        }
        let mut it = params.iter().copied();
        let mut fill = |dst: &mut dyn Iterator<Item = &mut f64>| {
            for v in dst {
                *v = it.next().unwrap();
            }
        };
        for b in &mut self.blocks {
            fill(&mut b.norm.scale.iter_mut());
            fill(&mut b.norm.shift.iter_mut());
            fill(&mut b.weight.iter_mut());
            fill(&mut b.bias.iter_mut());
        }
        fill(&mut self.out_weight.iter_mut());
        self.out_bias = params[params.len() - 2];
        self.log_beta = params[params.len() - 1];
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| 2 * b.norm.scale.len() + b.weight.len() + b.bias.len())
            .sum::<usize>()
            + self.out_weight.len()
            + 2
    }

    /// ReLU on/off pattern of every hidden unit for every row in train mode
    /// without dropout. Finite-difference checks use it to detect steps that
    /// cross a kink.
    pub fn relu_pattern(&self, x: ArrayView2<f64>) -> Result<Vec<bool>> {
        self.check_input(&x)?;
        let mut no_dropout = self.clone();
        no_dropout.dropout = 0.0;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cache = no_dropout.forward_cached(x, Mode::Train(&mut rng));
        Ok(cache
            .blocks
            .iter()
            .flat_map(|c| c.pre.iter().map(|&p| p > 0.0).collect::<Vec<_>>())
            .collect())
    }

    /// Sets every batch-norm's running statistics to the population
    /// statistics of `x` propagated through the network in eval mode.
    pub fn recompute_running_stats(&mut self, x: ArrayView2<f64>) -> Result<()> {
        self.check_input(&x)?;
        let n = x.nrows() as f64;
        if x.nrows() == 0 {
            return Err(Error::InvalidArgument("no rows for batch-norm statistics".into()));
        }
        let mut h = x.to_owned();
        for block in &mut self.blocks {
            let mean = h.sum_axis(Axis(0)) / n;
            let centered = &h - &mean;
            let var = (&centered * &centered).sum_axis(Axis(0)) / n;
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let affine_in = centered * &inv_std * &block.norm.scale + &block.norm.shift;
            h = (affine_in.dot(&block.weight.t()) + &block.bias).mapv(|v| v.max(0.0));
            block.norm.running_mean = mean;
            block.norm.running_var = var;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|v| v.is_finite())
            && self.blocks.iter().all(|b| {
                b.norm.running_mean.iter().all(|v| v.is_finite())
                    && b.norm.running_var.iter().all(|v| v.is_finite() && *v >= 0.0)
            })
    }
}

pub(crate) fn concat_row(speech: &[f32], text: &[f32]) -> Array1<f64> {
    speech
        .iter()
        .chain(text)
        .map(|&v| f64::from(v))
        .collect()
}
