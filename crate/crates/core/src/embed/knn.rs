//! Exact k-nearest-neighbor graph by brute force.

use ndarray::ArrayView2;
use rayon::prelude::*;

use super::EmbedError;

/// `k` neighbors per point, ascending by euclidean distance, ties by lower id.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub k: usize,
    /// Row-major `n * k`.
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborGraph {
    pub fn n_points(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn dists(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

pub(crate) fn sq_euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| {
        let d = (*x as f64) - (*y as f64);
        d * d
    }).sum()
}

/// The `k` nearest reference rows of `query`, skipping reference row `skip`.
pub(crate) fn nearest(
    reference: &ArrayView2<'_, f32>,
    query: &[f32],
    k: usize,
    skip: Option<usize>,
) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = reference
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(j, row)| (sq_euclidean(row.as_slice().expect("standard layout"), query), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < all.len() {
        all.select_nth_unstable_by(k, cmp);
        all.truncate(k);
    }
    all.sort_unstable_by(cmp);
    all.into_iter().map(|(d, j)| (d.sqrt(), j)).collect()
}

pub fn knn_exact(data: ArrayView2<'_, f32>, k: usize) -> Result<NeighborGraph, EmbedError> {
    let n = data.nrows();
    if k == 0 || k >= n {
        return Err(EmbedError::NeighborCount { k, n });
    }
    let data = data.as_standard_layout();
    let view = data.view();
    let rows: Vec<Vec<(f64, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| nearest(&view, view.row(i).as_slice().expect("standard layout"), k, Some(i)))
        .collect();
    if rows.iter().flatten().any(|(d, _)| !d.is_finite()) {
        return Err(EmbedError::NonFinite("input distances"));
    }
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for row in rows {
        for (d, j) in row {
            indices.push(j);
            distances.push(d);
        }
    }
    Ok(NeighborGraph { k, indices, distances })
}
