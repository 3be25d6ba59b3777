use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Agreement between predicted and reference WERs. Correlations are `None`
/// when either side has zero variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(a) || constant(b) {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub(crate) fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn predictor_report(preds: &[f64], refs: &[f64]) -> Result<PredictorReport> {
    if preds.len() != refs.len() {
        return Err(Error::DimMismatch {
            expected: refs.len(),
            found: preds.len(),
        });
    }
    if preds.len() < 2 {
        return Err(Error::InvalidArgument("need at least two values".into()));
    }
    if preds.iter().chain(refs).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("predictor report input".into()));
    }
    let n = preds.len() as f64;
    let mae = preds.iter().zip(refs).map(|(p, r)| (p - r).abs()).sum::<f64>() / n;
    let mse = preds.iter().zip(refs).map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / n;
    Ok(PredictorReport {
        pearson: pearson(preds, refs),
        spearman: pearson(&average_ranks(preds), &average_ranks(refs)),
        mae,
        rmse: mse.sqrt(),
    })
}
