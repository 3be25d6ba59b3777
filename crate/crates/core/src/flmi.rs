//! Target-aware preselection by Facility Location Mutual Information.
//!
//! For a candidate set `S` and query set `T` with candidate-query cosine
//! similarities `s`:
//!
//! ```text
//! I(S; T) = sum_{q in T} max_{c in S} s[c][q] + sum_{c in S} max_{q in T} s[c][q]
//! ```
//!
//! with the max over an empty set taken as 0. The second term is modular, so
//! each candidate's marginal gain is its best query similarity plus how much
//! it raises the per-query coverage.
//!
//! Similarities are served by a [`SimilaritySource`]: either a dense
//! in-memory [`SimilarityKernel`] or a [`StreamingKernel`] that recomputes
//! rows from the feature vectors, so memory stays at `O(n + m)` rows of
//! features plus one row buffer per worker.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;

use crate::corpus::{EmbeddingMatrix, UtteranceRecord};
use crate::error::{Error, Result};

pub const DEFAULT_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GreedyMode {
    Exact,
    Lazy,
}

/// Row access to an `n x m` candidate-query similarity matrix.
pub trait SimilaritySource: Sync {
    fn n_candidates(&self) -> usize;
    fn n_queries(&self) -> usize;
    fn candidate_id(&self, i: usize) -> &str;
    /// Writes `s[i][..]` into `out` (length `n_queries`).
    fn fill_row(&self, i: usize, out: &mut [f64]);
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn cosine_with_norms(a: &[f32], b: &[f32], norm_a: f64, norm_b: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    dot / (norm_a * norm_b)
}

fn norms(m: &EmbeddingMatrix, rows: &[usize]) -> Result<Vec<f64>> {
    rows.iter()
        .map(|&i| {
            let n = l2_norm(m.row(i));
            if n > 0.0 {
                Ok(n)
            } else {
                Err(Error::ZeroNorm(m.ids()[i].clone()))
            }
        })
        .collect()
}

/// Similarities computed on demand from candidate and query features.
pub struct StreamingKernel<'a> {
    candidates: &'a EmbeddingMatrix,
    candidate_rows: Vec<usize>,
    candidate_norms: Vec<f64>,
    queries: &'a EmbeddingMatrix,
    query_norms: Vec<f64>,
}

impl<'a> StreamingKernel<'a> {
    /// Uses every row of `candidates`.
    pub fn new(candidates: &'a EmbeddingMatrix, queries: &'a EmbeddingMatrix) -> Result<Self> {
        Self::with_rows(candidates, (0..candidates.len()).collect(), queries)
    }

    /// Uses the listed rows of `candidates`, in that order.
    pub fn with_rows(
        candidates: &'a EmbeddingMatrix,
        candidate_rows: Vec<usize>,
        queries: &'a EmbeddingMatrix,
    ) -> Result<Self> {
        if candidates.dim() != queries.dim() {
            return Err(Error::DimMismatch {
                expected: candidates.dim(),
                found: queries.dim(),
            });
        }
        if queries.is_empty() {
            return Err(Error::InvalidArgument("query set is empty".into()));
        }
        let candidate_norms = norms(candidates, &candidate_rows)?;
        let query_norms = norms(queries, &(0..queries.len()).collect::<Vec<_>>())?;
        Ok(StreamingKernel {
            candidates,
            candidate_rows,
            candidate_norms,
            queries,
            query_norms,
        })
    }
}

impl SimilaritySource for StreamingKernel<'_> {
    fn n_candidates(&self) -> usize {
        self.candidate_rows.len()
    }

    fn n_queries(&self) -> usize {
        self.queries.len()
    }

    fn candidate_id(&self, i: usize) -> &str {
        &self.candidates.ids()[self.candidate_rows[i]]
    }

    fn fill_row(&self, i: usize, out: &mut [f64]) {
        let x = self.candidates.row(self.candidate_rows[i]);
        let nx = self.candidate_norms[i];
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = cosine_with_norms(x, self.queries.row(j), nx, self.query_norms[j]);
        }
    }
}

/// Dense `n x m` similarity matrix.
#[derive(Clone, Debug)]
pub struct SimilarityKernel {
    candidate_ids: Vec<String>,
    query_ids: Vec<String>,
    candidate_index: HashMap<String, usize>,
    s: Vec<f64>,
}

impl SimilarityKernel {
    /// Cosine similarities between every candidate and query row.
    pub fn build(candidates: &EmbeddingMatrix, queries: &EmbeddingMatrix) -> Result<Self> {
        let streaming = StreamingKernel::new(candidates, queries)?;
        let m = queries.len();
        let mut s = vec![0.0; candidates.len() * m];
        s.par_chunks_mut(m)
            .enumerate()
            .for_each(|(i, row)| streaming.fill_row(i, row));
        Self::assemble(candidates.ids().to_vec(), queries.ids().to_vec(), s)
    }

    /// Wraps an explicit matrix given as one row per candidate.
    pub fn from_rows(
        candidate_ids: Vec<String>,
        query_ids: Vec<String>,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        if rows.len() != candidate_ids.len() {
            return Err(Error::DimMismatch {
                expected: candidate_ids.len(),
                found: rows.len(),
            });
        }
        let mut s = Vec::with_capacity(rows.len() * query_ids.len());
        for row in rows {
            if row.len() != query_ids.len() {
                return Err(Error::DimMismatch {
                    expected: query_ids.len(),
                    found: row.len(),
                });
            }
            s.extend_from_slice(row);
        }
        Self::assemble(candidate_ids, query_ids, s)
    }

    fn assemble(candidate_ids: Vec<String>, query_ids: Vec<String>, s: Vec<f64>) -> Result<Self> {
        if query_ids.is_empty() {
            return Err(Error::InvalidArgument("query set is empty".into()));
        }
        if let Some(v) = s.iter().find(|v| !v.is_finite() || v.abs() > 1.0 + 1e-6) {
            return Err(Error::InvalidArgument(format!(
                "similarity {v} outside [-1, 1]"
            )));
        }
        let mut candidate_index = HashMap::with_capacity(candidate_ids.len());
        for (i, id) in candidate_ids.iter().enumerate() {
            if candidate_index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(SimilarityKernel {
            candidate_ids,
            query_ids,
            candidate_index,
            s,
        })
    }

    pub fn get(&self, candidate: usize, query: usize) -> f64 {
        self.s[candidate * self.query_ids.len() + query]
    }

    pub fn row(&self, candidate: usize) -> &[f64] {
        let m = self.query_ids.len();
        &self.s[candidate * m..(candidate + 1) * m]
    }

    pub fn query_ids(&self) -> &[String] {
        &self.query_ids
    }

    pub fn candidate_ids(&self) -> &[String] {
        &self.candidate_ids
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.candidate_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }
}

impl SimilaritySource for SimilarityKernel {
    fn n_candidates(&self) -> usize {
        self.candidate_ids.len()
    }

    fn n_queries(&self) -> usize {
        self.query_ids.len()
    }

    fn candidate_id(&self, i: usize) -> &str {
        &self.candidate_ids[i]
    }

    fn fill_row(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(self.row(i));
    }
}

/// FLMI of the candidates at `selected` (indices, duplicates ignored),
/// evaluated from scratch.
pub fn flmi_value_indices<S: SimilaritySource>(source: &S, selected: &[usize]) -> f64 {
    let m = source.n_queries();
    let mut seen = vec![false; source.n_candidates()];
    let mut coverage = vec![f64::NEG_INFINITY; m];
    let mut representativeness = 0.0;
    let mut row = vec![0.0; m];
    for &i in selected {
        if std::mem::replace(&mut seen[i], true) {
            continue;
        }
        source.fill_row(i, &mut row);
        representativeness += row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (c, &v) in coverage.iter_mut().zip(&row) {
            *c = c.max(v);
        }
    }
    let coverage: f64 = coverage
        .iter()
        .map(|&c| if c == f64::NEG_INFINITY { 0.0 } else { c })
        .sum();
    coverage + representativeness
}

/// FLMI of the candidates named in `selected`.
pub fn flmi_value(selected: &[&str], kernel: &SimilarityKernel) -> Result<f64> {
    let idx = selected
        .iter()
        .map(|id| kernel.index_of(id))
        .collect::<Result<Vec<_>>>()?;
    Ok(flmi_value_indices(kernel, &idx))
}

/// Incrementally maintained greedy state.
#[derive(Clone, Debug)]
pub struct GreedyState {
    selected: Vec<usize>,
    in_set: Vec<bool>,
    /// Best similarity of the current set to each query; `-inf` while empty.
    best_to_query: Vec<f64>,
    /// `max_q s[c][q]` per candidate.
    query_max: Vec<f64>,
    value: f64,
}

impl GreedyState {
    fn new<S: SimilaritySource>(source: &S, chunk: usize) -> Self {
        let n = source.n_candidates();
        let m = source.n_queries();
        let mut query_max = vec![0.0; n];
        query_max
            .par_chunks_mut(chunk.max(1))
            .enumerate()
            .for_each(|(c, out)| {
                let mut row = vec![0.0; m];
                for (k, slot) in out.iter_mut().enumerate() {
                    source.fill_row(c * chunk.max(1) + k, &mut row);
                    *slot = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                }
            });
        GreedyState {
            selected: Vec::new(),
            in_set: vec![false; n],
            best_to_query: vec![f64::NEG_INFINITY; m],
            query_max,
            value: 0.0,
        }
    }

    /// `f(c | S)` given candidate `c`'s similarity row.
    fn gain(&self, candidate: usize, row: &[f64]) -> f64 {
        let coverage: f64 = row
            .iter()
            .zip(&self.best_to_query)
            .map(|(&s, &best)| {
                if best == f64::NEG_INFINITY {
                    s
                } else {
                    (s - best).max(0.0)
                }
            })
            .sum();
        coverage + self.query_max[candidate]
    }

    fn insert(&mut self, candidate: usize, row: &[f64], gain: f64) {
        for (best, &s) in self.best_to_query.iter_mut().zip(row) {
            *best = best.max(s);
        }
        self.in_set[candidate] = true;
        self.selected.push(candidate);
        self.value += gain;
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Result of a greedy run.
#[derive(Clone, Debug)]
pub struct GreedyOutcome {
    /// Candidate indices in insertion order.
    pub order: Vec<usize>,
    /// Marginal gain of each insertion.
    pub gains: Vec<f64>,
    /// Incrementally accumulated FLMI value.
    pub value: f64,
}

/// Heap key: larger gain first, then smaller id rank.
#[derive(Clone, Copy, Debug)]
struct Bound {
    gain: f64,
    rank: usize,
    candidate: usize,
    evaluated_at: usize,
}

impl Bound {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.rank.cmp(&self.rank))
    }
}

impl PartialEq for Bound {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Bound {}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bound {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

/// Evaluates every unselected candidate; returns the best (gain, rank)
/// candidate and, if requested, all bounds.
fn full_pass<S: SimilaritySource>(
    source: &S,
    state: &GreedyState,
    rank: &[usize],
    chunk: usize,
    keep_all: bool,
) -> (Option<Bound>, Vec<Bound>) {
    let n = source.n_candidates();
    let m = source.n_queries();
    let evaluated_at = state.selected.len();
    let chunk = chunk.max(1);
    let per_chunk: Vec<(Option<Bound>, Vec<Bound>)> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut row = vec![0.0; m];
            let mut best: Option<Bound> = None;
            let mut all = Vec::new();
            for i in c * chunk..((c + 1) * chunk).min(n) {
                if state.in_set[i] {
                    continue;
                }
                source.fill_row(i, &mut row);
                let b = Bound {
                    gain: state.gain(i, &row),
                    rank: rank[i],
                    candidate: i,
                    evaluated_at,
                };
                if best.is_none_or(|cur| b > cur) {
                    best = Some(b);
                }
                if keep_all {
                    all.push(b);
                }
            }
            (best, all)
        })
        .collect();
    let mut best: Option<Bound> = None;
    let mut all = Vec::new();
    for (b, v) in per_chunk {
        if let Some(b) = b {
            if best.is_none_or(|cur| b > cur) {
                best = Some(b);
            }
        }
        all.extend(v);
    }
    (best, all)
}

fn id_ranks<S: SimilaritySource>(source: &S) -> Vec<usize> {
    let mut order: Vec<usize> = (0..source.n_candidates()).collect();
    order.sort_by(|&a, &b| source.candidate_id(a).cmp(source.candidate_id(b)));
    let mut rank = vec![0; order.len()];
    for (r, i) in order.into_iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// Greedy FLMI maximization under a cardinality budget.
///
/// Each step adds the candidate with the largest marginal gain, ties going to
/// the lexicographically smallest id. `Lazy` keeps stale gains in a max-heap
/// and re-evaluates only the top; both modes return the same order.
pub fn greedy_select_indices<S: SimilaritySource>(
    source: &S,
    budget: usize,
    mode: GreedyMode,
    chunk: usize,
) -> Result<GreedyOutcome> {
    let n = source.n_candidates();
    if budget > n {
        return Err(Error::BudgetTooLarge {
            budget,
            available: n,
        });
    }
    let mut outcome = GreedyOutcome {
        order: Vec::with_capacity(budget),
        gains: Vec::with_capacity(budget),
        value: 0.0,
    };
    if budget == 0 {
        return Ok(outcome);
    }
    let rank = id_ranks(source);
    let mut state = GreedyState::new(source, chunk);
    let m = source.n_queries();
    let mut row = vec![0.0; m];

    let mut commit = |state: &mut GreedyState, pick: Bound, row: &mut Vec<f64>| {
        source.fill_row(pick.candidate, row);
        state.insert(pick.candidate, row, pick.gain);
        outcome.order.push(pick.candidate);
        outcome.gains.push(pick.gain);
    };

    match mode {
        GreedyMode::Exact => {
            while state.selected.len() < budget {
                let (best, _) = full_pass(source, &state, &rank, chunk, false);
                commit(&mut state, best.expect("unselected candidates remain"), &mut row);
            }
        }
        GreedyMode::Lazy => {
            // While some query is still uncovered a gain can grow when the set
            // grows, so stale gains are only valid bounds after the first pick
            // (which covers every query). Re-seed the heap once at that point.
            let (first, _) = full_pass(source, &state, &rank, chunk, false);
            commit(&mut state, first.expect("budget >= 1"), &mut row);
            let (_, seeds) = full_pass(source, &state, &rank, chunk, true);
            let mut heap = BinaryHeap::from(seeds);
            while state.selected.len() < budget {
                let top = heap.pop().expect("unselected candidates remain");
                let now = state.selected.len();
                let fresh = if top.evaluated_at == now {
                    top
                } else {
                    source.fill_row(top.candidate, &mut row);
                    Bound {
                        gain: state.gain(top.candidate, &row),
                        evaluated_at: now,
                        ..top
                    }
                };
                if heap.peek().is_none_or(|next| fresh >= *next) {
                    commit(&mut state, fresh, &mut row);
                } else {
                    heap.push(fresh);
                }
            }
        }
    }
    outcome.value = state.value;
    Ok(outcome)
}

/// Greedy selection returning candidate ids in insertion order.
pub fn greedy_select<S: SimilaritySource>(
    source: &S,
    budget: usize,
    mode: GreedyMode,
) -> Result<Vec<String>> {
    let outcome = greedy_select_indices(source, budget, mode, DEFAULT_CHUNK)?;
    Ok(outcome
        .order
        .into_iter()
        .map(|i| source.candidate_id(i).to_string())
        .collect())
}

/// Selects `budget` pool utterances that best cover the query features.
///
/// Candidate similarities are streamed from the feature rows in blocks of
/// `chunk` candidates; the query matrix stays resident.
pub fn preselect(
    pool: &[UtteranceRecord],
    pool_features: &EmbeddingMatrix,
    query_features: &EmbeddingMatrix,
    budget: usize,
    mode: GreedyMode,
    chunk: usize,
) -> Result<Vec<String>> {
    let rows = pool
        .iter()
        .map(|u| {
            pool_features.position(&u.utt_id).ok_or_else(|| Error::Missing {
                kind: "feature row",
                id: u.utt_id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if budget > rows.len() {
        return Err(Error::BudgetTooLarge {
            budget,
            available: rows.len(),
        });
    }
    if budget == 0 {
        return Ok(Vec::new());
    }
    let kernel = StreamingKernel::with_rows(pool_features, rows, query_features)?;
    let outcome = greedy_select_indices(&kernel, budget, mode, chunk)?;
    Ok(outcome
        .order
        .into_iter()
        .map(|i| kernel.candidate_id(i).to_string())
        .collect())
}
