//! Fuzzy simplicial set: per-point distance calibration and symmetrized
//! membership weights.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::knn::NeighborGraph;
use super::EmbedError;

pub const SIGMA_MIN: f64 = 1e-10;
pub const SIGMA_MAX: f64 = 1e4;
const BISECTION_STEPS: usize = 64;

/// Symmetric weighted graph stored as CSR, both directions of each edge
/// sharing one value.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    pub n: usize,
    /// Distance to the nearest neighbor at positive distance.
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
    pub weights: Vec<f64>,
}

impl FuzzyGraph {
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.targets[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let r = self.offsets[i]..self.offsets[i + 1];
        match self.targets[r.clone()].binary_search(&j) {
            Ok(pos) => self.weights[r.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Each undirected edge once, `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.neighbors(i).filter(move |(j, _)| i < *j).map(move |(j, w)| (i, j, w)))
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    /// Number of connected components (zero-weight edges are never stored).
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                for (j, _) in self.neighbors(i) {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }
}

/// `sum_j exp(-max(0, d_j - rho) / sigma)`
pub fn membership_sum(dists: &[f64], rho: f64, sigma: f64) -> f64 {
    dists.iter().map(|d| (-(d - rho).max(0.0) / sigma).exp()).sum()
}

/// Smallest positive distance, or 0 when every distance is 0.
pub fn local_rho(dists: &[f64]) -> f64 {
    dists.iter().copied().find(|d| *d > 0.0).unwrap_or(0.0)
}

/// Bisects `sigma` in `[SIGMA_MIN, SIGMA_MAX]` so that the membership sum hits
/// `target`. Rows whose weights cannot depend on sigma (every distance at or
/// below `rho`) get `SIGMA_MAX`.
pub fn calibrate_sigma(dists: &[f64], rho: f64, target: f64) -> f64 {
    if dists.iter().all(|d| *d <= rho) {
        return SIGMA_MAX;
    }
    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if membership_sum(dists, rho, mid) > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Directed memberships from the kNN graph combined as `u + v - u v`.
pub fn calibrate_fuzzy(graph: &NeighborGraph) -> Result<FuzzyGraph, EmbedError> {
    if graph.distances.iter().any(|d| !d.is_finite()) {
        return Err(EmbedError::NonFinite("neighbor distances"));
    }
    let n = graph.n_points();
    let target = (graph.k as f64).log2();
    let calibrated: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d = graph.dists(i);
            let rho = local_rho(d);
            (rho, calibrate_sigma(d, rho, target))
        })
        .collect();
    let (rho, sigma): (Vec<f64>, Vec<f64>) = calibrated.into_iter().unzip();

    let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for i in 0..n {
        for (&j, &d) in graph.neighbors(i).iter().zip(graph.dists(i)) {
            let w = (-(d - rho[i]).max(0.0) / sigma[i]).exp();
            directed.insert((i, j), w);
        }
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(i, j), &u) in &directed {
        let reverse = directed.get(&(j, i)).copied();
        if reverse.is_some() && j < i {
            continue; // handled from the (j, i) side
        }
        let v = reverse.unwrap_or(0.0);
        let w = u + v - u * v;
        if w > 0.0 {
            rows[i].push((j, w));
            rows[j].push((i, w));
        }
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    offsets.push(0);
    for mut row in rows {
        row.sort_by_key(|e| e.0);
        for (j, w) in row {
            targets.push(j);
            weights.push(w);
        }
        offsets.push(targets.len());
    }
    Ok(FuzzyGraph { n, rho, sigma, offsets, targets, weights })
}
