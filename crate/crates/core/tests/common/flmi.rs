use consel_core::flmi::SimilarityKernel;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// The set function evaluated straight from its definition; empty max is 0.
pub fn value(s: &[Vec<f64>], set: &[usize]) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let m = s[0].len();
    let cover: f64 = (0..m)
        .map(|q| set.iter().map(|&c| s[c][q]).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    let repr: f64 = set
        .iter()
        .map(|&c| s[c].iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    cover + repr
}

/// Exhaustive optimum over all subsets of size `k`.
pub fn best_subset(s: &[Vec<f64>], k: usize) -> f64 {
    let n = s.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == k {
            let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            best = best.max(value(s, &set));
        }
    }
    best
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize, lo: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..m).map(|_| rng.random_range(lo..=1.0)).collect())
        .collect()
}

pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:03}")).collect()
}

pub fn kernel(s: &[Vec<f64>]) -> SimilarityKernel {
    SimilarityKernel::from_rows(ids("c", s.len()), ids("q", s[0].len()), s).unwrap()
}

/// Marginal gain of `j` on `set` by two full evaluations.
pub fn gain(s: &[Vec<f64>], set: &[usize], j: usize) -> f64 {
    let mut with = set.to_vec();
    with.push(j);
    value(s, &with) - value(s, set)
}

/// Diminishing returns and monotonicity on one random instance: a random
/// chain X ⊆ Y and an element outside Y. Returns the number of checks.
pub fn check_submodular(rng: &mut ChaCha8Rng, s: &[Vec<f64>]) -> Result<usize, String> {
    let n = s.len();
    let mut checks = 0;
    for j in 0..n {
        let y: Vec<usize> = (0..n).filter(|&i| i != j && rng.random_bool(0.5)).collect();
        let x: Vec<usize> = y.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        let (gx, gy) = (gain(s, &x, j), gain(s, &y, j));
        ensure!(gx >= gy - 1e-9, "diminishing returns violated: {gx} < {gy} (j={j}, X={x:?}, Y={y:?})");
        ensure!(gy >= -1e-9, "monotonicity violated: gain {gy} (j={j}, Y={y:?})");
        checks += 2;
    }
    Ok(checks)
}
