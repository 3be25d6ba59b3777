use consel_core::predictor::PredictorNet;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SMALL: [usize; 4] = [8, 6, 4, 1];

/// Plain-loop train-mode forward pass (batch statistics, no dropout) over
/// the flat parameter layout. Returns the batch MSE and the sign of every
/// hidden pre-activation.
pub fn reference_loss(layers: &[usize], params: &[f64], x: &[Vec<f64>], t: &[f64]) -> (f64, Vec<bool>) {
    let mut p = 0;
    let mut take = |n: usize| {
        let s = params[p..p + n].to_vec();
        p += n;
        s
    };
    let b = x.len() as f64;
    let mut h: Vec<Vec<f64>> = x.to_vec();
    let mut signs = Vec::new();
    for w in layers[..layers.len() - 1].windows(2) {
        let (fin, fout) = (w[0], w[1]);
        let scale = take(fin);
        let shift = take(fin);
        let weight = take(fin * fout);
        let bias = take(fout);
        let mut normed = vec![vec![0.0; fin]; h.len()];
        for j in 0..fin {
            let mean = h.iter().map(|r| r[j]).sum::<f64>() / b;
            let var = h.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / b;
            for (r, row) in h.iter().enumerate() {
                normed[r][j] = (row[j] - mean) / (var + 1e-5).sqrt() * scale[j] + shift[j];
            }
        }
        let mut next = vec![vec![0.0; fout]; h.len()];
        for r in 0..h.len() {
            for o in 0..fout {
                let mut acc = bias[o];
                for i in 0..fin {
                    acc += weight[o * fin + i] * normed[r][i];
                }
                signs.push(acc > 0.0);
                next[r][o] = acc.max(0.0);
            }
        }
        h = next;
    }
    let out_w = take(layers[layers.len() - 2]);
    let out_b = take(1)[0];
    let beta = take(1)[0].exp();
    let mut loss = 0.0;
    for (r, row) in h.iter().enumerate() {
        let z: f64 = row.iter().zip(&out_w).map(|(a, w)| a * w).sum::<f64>() + out_b;
        let y = 0.01 + 0.98 / (1.0 + (-z / beta).exp());
        loss += (y - t[r]).powi(2);
    }
    (loss / b, signs)
}

#[derive(Debug, Default)]
pub struct GradSummary {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
}

/// Compares analytic gradients with central differences of
/// [`reference_loss`] on `nets` random networks. A step that flips any ReLU
/// is retried with a smaller step and skipped if it still does.
pub fn gradient_check(nets: usize, seed: u64) -> Result<GradSummary, String> {
    let layers = &SMALL;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradSummary::default();
    for n in 0..nets {
        let mut net = PredictorNet::xavier(layers, 0.0, &mut rng).unwrap();
        let mut params = net.flat_params();
        for v in params.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        net.set_flat_params(&params).unwrap();
        let rows = rng.random_range(3..9);
        let x: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..layers[0]).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let t: Vec<f64> = (0..rows).map(|_| rng.random_range(0.0..1.0)).collect();
        let xa = Array2::from_shape_fn((rows, layers[0]), |(r, c)| x[r][c]);
        let ta = Array1::from(t.clone());

        let (loss, grads) = net
            .loss_and_gradients(xa.view(), ta.view(), None)
            .map_err(|e| e.to_string())?;
        let (ref_loss, base) = reference_loss(layers, &params, &x, &t);
        ensure!((loss - ref_loss).abs() <= 1e-12 * ref_loss.max(1.0), "net {n}: loss {loss} vs {ref_loss}");
        ensure!(net.relu_pattern(xa.view()).unwrap() == base, "net {n}: relu pattern differs");

        let analytic = grads.flat();
        ensure!(analytic.len() == params.len(), "gradient length {}", analytic.len());
        for i in 0..params.len() {
            let mut fd = None;
            for h in [1e-6, 1e-8] {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus[i] += h;
                minus[i] -= h;
                let (lp, sp) = reference_loss(layers, &plus, &x, &t);
                let (lm, sm) = reference_loss(layers, &minus, &x, &t);
                if sp == base && sm == base {
                    fd = Some((lp - lm) / (2.0 * h));
                    break;
                }
            }
            let Some(fd) = fd else {
                out.skipped += 1;
                continue;
            };
            let a = analytic[i];
            let err = (a - fd).abs();
            let scale = a.abs().max(fd.abs());
            if scale > 1e-4 {
                out.max_rel = out.max_rel.max(err / scale);
            }
            ensure!(err <= 1e-3 * scale + 1e-7, "net {n} param {i}: analytic {a} vs numeric {fd}");
            out.checked += 1;
        }
    }
    ensure!(out.skipped * 100 <= out.checked, "too many kinks: {} of {}", out.skipped, out.checked);
    Ok(out)
}
