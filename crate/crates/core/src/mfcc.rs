//! Utterance-level 39-dimensional MFCC means.
//!
//! Pipeline per utterance: pre-emphasis, Hamming-windowed framing (the final
//! incomplete frame is dropped), power spectrum, HTK-mel triangular
//! filterbank over 0..Nyquist, floored natural log, orthonormal DCT-II
//! keeping coefficients 0..n_ceps, then delta and delta-delta by regression
//! over +-`delta_window` frames with edge replication. The output is the mean
//! of the per-frame [static | delta | delta-delta] vectors.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const MFCC_DIM: usize = 39;

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct MfccConfig {
    pub sample_rate_hz: u32,
    pub preemphasis: f64,
    pub window_ms: u32,
    pub hop_ms: u32,
    pub fft_size: usize,
    pub n_mels: usize,
    pub n_ceps: usize,
    pub delta_window: usize,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            sample_rate_hz: 16_000,
            preemphasis: 0.97,
            window_ms: 25,
            hop_ms: 10,
            fft_size: 512,
            n_mels: 26,
            n_ceps: 13,
            delta_window: 2,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn window_len(&self) -> usize {
        (self.sample_rate_hz as usize * self.window_ms as usize) / 1000
    }

    pub fn hop_len(&self) -> usize {
        (self.sample_rate_hz as usize * self.hop_ms as usize) / 1000
    }

    /// Length of the pooled output vector.
    pub fn output_dim(&self) -> usize {
        3 * self.n_ceps
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_ceps == 0 || self.n_ceps > self.n_mels {
            return bad(format!("n_ceps {} must be in 1..={}", self.n_ceps, self.n_mels));
        }
        if self.window_len() == 0 || self.hop_len() == 0 {
            return bad("window and hop must span at least one sample".into());
        }
        if self.fft_size < self.window_len() {
            return bad(format!(
                "fft_size {} shorter than window {}",
                self.fft_size,
                self.window_len()
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        if self.delta_window == 0 {
            return bad("delta_window must be positive".into());
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Precomputed window, filterbank and DCT basis for one configuration.
pub struct MfccExtractor {
    cfg: MfccConfig,
    window: Vec<f64>,
    /// Per filter: first bin and weights for consecutive bins.
    filters: Vec<(usize, Vec<f64>)>,
    /// Row-major `n_ceps x n_mels`.
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MfccExtractor {
    pub fn new(cfg: MfccConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.window_len();
        let window = (0..n)
            .map(|i| {
                if n == 1 {
                    1.0
                } else {
                    0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()
                }
            })
            .collect();

        let n_bins = cfg.fft_size / 2 + 1;
        let nyquist = cfg.sample_rate_hz as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.sample_rate_hz as f64 / cfg.fft_size as f64;
        let filters = (0..cfg.n_mels)
            .map(|k| {
                let (lo, center, hi) = (edges[k], edges[k + 1], edges[k + 2]);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|b| {
                        let f = b as f64 * bin_hz;
                        let w = if f > lo && f <= center {
                            (f - lo) / (center - lo)
                        } else if f > center && f < hi {
                            (hi - f) / (hi - center)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((b, w))
                    })
                    .collect();
                let start = weights.first().map_or(0, |&(b, _)| b);
                let mut dense = vec![0.0; weights.last().map_or(0, |&(b, _)| b + 1 - start)];
                for (b, w) in weights {
                    dense[b - start] = w;
                }
                (start, dense)
            })
            .collect();

        let m = cfg.n_mels;
        let mut dct = vec![0.0; cfg.n_ceps * m];
        for k in 0..cfg.n_ceps {
            let scale = if k == 0 {
                (1.0 / m as f64).sqrt()
            } else {
                (2.0 / m as f64).sqrt()
            };
            for j in 0..m {
                dct[k * m + j] = scale
                    * (std::f64::consts::PI * k as f64 * (2 * j + 1) as f64 / (2 * m) as f64)
                        .cos();
            }
        }

        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(MfccExtractor {
            cfg,
            window,
            filters,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    /// Static cepstra per frame, `frames x n_ceps`.
    pub fn cepstra(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>> {
        let cfg = &self.cfg;
        let win = cfg.window_len();
        let hop = cfg.hop_len();
        if samples.len() < win {
            return Err(Error::TooShort(format!(
                "{} samples, need at least {win}",
                samples.len()
            )));
        }
        let emphasized: Vec<f64> = std::iter::once(samples[0])
            .chain(
                samples
                    .windows(2)
                    .map(|w| w[1] - cfg.preemphasis * w[0]),
            )
            .collect();
        let n_frames = 1 + (samples.len() - win) / hop;
        let n_bins = cfg.fft_size / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut power = vec![0.0; n_bins];
        let mut log_mel = vec![0.0; cfg.n_mels];
        let mut out = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let frame = &emphasized[t * hop..t * hop + win];
            for (slot, (x, w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(x * w, 0.0);
            }
            for slot in &mut buf[win..] {
                *slot = Complex::new(0.0, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for ((start, weights), lm) in self.filters.iter().zip(log_mel.iter_mut()) {
                let energy: f64 = weights
                    .iter()
                    .zip(&power[*start..])
                    .map(|(w, p)| w * p)
                    .sum();
                *lm = energy.max(cfg.log_floor).ln();
            }
            let ceps = self
                .dct
                .chunks_exact(cfg.n_mels)
                .map(|row| row.iter().zip(&log_mel).map(|(a, b)| a * b).sum())
                .collect();
            out.push(ceps);
        }
        Ok(out)
    }

    /// Per-frame [static | delta | delta-delta] vectors.
    pub fn frames(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>> {
        let statics = self.cepstra(samples)?;
        let deltas = regression_deltas(&statics, self.cfg.delta_window);
        let delta2 = regression_deltas(&deltas, self.cfg.delta_window);
        Ok(statics
            .into_iter()
            .zip(deltas)
            .zip(delta2)
            .map(|((mut s, d), dd)| {
                s.extend(d);
                s.extend(dd);
                s
            })
            .collect())
    }

    /// Mean of the per-frame vectors.
    pub fn pooled(&self, samples: &[f64]) -> Result<Vec<f64>> {
        let frames = self.frames(samples)?;
        let mut mean = vec![0.0; self.cfg.output_dim()];
        for f in &frames {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        let n = frames.len() as f64;
        for v in &mut mean {
            *v /= n;
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite MFCC mean".into()));
        }
        Ok(mean)
    }
}

/// `d_t = sum_n n (c_{t+n} - c_{t-n}) / (2 sum_n n^2)`, indices clamped to
/// the first/last frame.
pub fn regression_deltas(frames: &[Vec<f64>], half_width: usize) -> Vec<Vec<f64>> {
    let t_max = frames.len() as isize - 1;
    let denom = 2.0 * (1..=half_width).map(|n| (n * n) as f64).sum::<f64>();
    let at = |t: isize| &frames[t.clamp(0, t_max) as usize];
    (0..frames.len() as isize)
        .map(|t| {
            let dim = frames[t as usize].len();
            let mut d = vec![0.0; dim];
            for n in 1..=half_width as isize {
                let (next, prev) = (at(t + n), at(t - n));
                for i in 0..dim {
                    d[i] += n as f64 * (next[i] - prev[i]);
                }
            }
            for v in &mut d {
                *v /= denom;
            }
            d
        })
        .collect()
}

/// Pooled MFCC vector of `samples` under `cfg` (39 values for the default
/// configuration).
pub fn mfcc39(samples: &[f64], cfg: &MfccConfig) -> Result<Vec<f64>> {
    MfccExtractor::new(cfg.clone())?.pooled(samples)
}

/// Reads a 16 kHz mono 16-bit PCM WAV file, scaling samples by 1/32768.
pub fn read_wav_pcm16(path: impl AsRef<Path>) -> Result<(Vec<f64>, u32)> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedAudio(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: {:?} {}-bit, expected 16-bit PCM",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    if spec.sample_rate != 16_000 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: sample rate {} Hz, expected 16000 (no resampling)",
            path.display(),
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| {
            s.map(|v| f64::from(v) / 32768.0)
                .map_err(|e| Error::UnsupportedAudio(format!("{}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, spec.sample_rate))
}
