//! Hyperparameter sweep over `n_neighbors` and `min_dist`, scored on
//! transformed validation points.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::{dbscan, median_k_distance, silhouette, trustworthiness};
use super::umap::{umap_fit_matrix, umap_transform, UmapParams};
use super::EmbedError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMetric {
    Silhouette,
    Trustworthiness,
}

impl FromStr for SweepMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "silhouette" => Ok(SweepMetric::Silhouette),
            "trustworthiness" => Ok(SweepMetric::Trustworthiness),
            other => Err(format!("unknown metric {other:?} (silhouette | trustworthiness)")),
        }
    }
}

impl fmt::Display for SweepMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMetric::Silhouette => "silhouette",
            SweepMetric::Trustworthiness => "trustworthiness",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub neighbors: Vec<usize>,
    pub min_dists: Vec<f64>,
    pub base: UmapParams,
    pub metric: SweepMetric,
    pub dbscan_min_pts: usize,
    /// DBSCAN radius as a multiple of the median `min_pts`-neighbor distance.
    pub dbscan_scale: f64,
    pub trust_k: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            neighbors: vec![5, 15, 50, 200],
            min_dists: vec![0.0, 0.1, 0.5],
            base: UmapParams::default(),
            metric: SweepMetric::Silhouette,
            dbscan_min_pts: 5,
            dbscan_scale: 2.0,
            trust_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRun {
    pub rank: usize,
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub silhouette: f64,
    pub trustworthiness: f64,
    pub clusters: usize,
    pub noise_fraction: f64,
}

impl SweepRun {
    pub fn score(&self, metric: SweepMetric) -> f64 {
        match metric {
            SweepMetric::Silhouette => self.silhouette,
            SweepMetric::Trustworthiness => self.trustworthiness,
        }
    }
}

/// Density clusters on an embedding with a radius scaled from the data.
pub fn density_clusters(coords: &Array2<f64>, min_pts: usize, scale: f64) -> Vec<Option<usize>> {
    let eps = scale * median_k_distance(coords, min_pts.max(1));
    dbscan(coords, eps, min_pts)
}

/// Scores a validation embedding: (silhouette, clusters, noise fraction).
pub fn cluster_distinctness(coords: &Array2<f64>, min_pts: usize, scale: f64) -> (f64, usize, f64) {
    let labels = density_clusters(coords, min_pts, scale);
    let clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let noise = labels.iter().filter(|l| l.is_none()).count() as f64 / labels.len().max(1) as f64;
    (silhouette(coords, &labels), clusters, noise)
}

/// Seeded split of `n` rows into (train, validation) with sorted row ids.
pub fn split_rows(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val = rand::seq::index::sample(&mut rng, n, n_val).into_vec();
    val.sort_unstable();
    let mut is_val = vec![false; n];
    val.iter().for_each(|&i| is_val[i] = true);
    let train = (0..n).filter(|&i| !is_val[i]).collect();
    (train, val)
}

/// Fits every grid configuration on `train`, transforms `val`, and ranks the
/// runs best first by the configured metric (ties keep grid order).
pub fn sweep(train: &Array2<f32>, val: &Array2<f32>, config: &SweepConfig) -> Result<Vec<SweepRun>, EmbedError> {
    if config.neighbors.is_empty() || config.min_dists.is_empty() {
        return Err(EmbedError::Parameter("sweep grids must be non-empty".into()));
    }
    if val.nrows() == 0 {
        return Err(EmbedError::Parameter("validation set is empty".into()));
    }
    let mut runs = Vec::new();
    for &k in &config.neighbors {
        for &md in &config.min_dists {
            let params = UmapParams { n_neighbors: k, min_dist: md, ..config.base.clone() };
            let model = umap_fit_matrix(train, &params)?;
            let coords = umap_transform(&model, val.view())?.mapv(|x| x as f64);
            let (sil, clusters, noise) = cluster_distinctness(&coords, config.dbscan_min_pts, config.dbscan_scale);
            let trust = trustworthiness(val.view(), &coords, config.trust_k.min(val.nrows().saturating_sub(1)));
            log::info!("sweep k={k} min_dist={md}: silhouette {sil:.4}, trustworthiness {trust:.4}");
            runs.push(SweepRun {
                rank: 0,
                n_neighbors: k,
                min_dist: md,
                silhouette: sil,
                trustworthiness: trust,
                clusters,
                noise_fraction: noise,
            });
        }
    }
    runs.sort_by(|x, y| y.score(config.metric).total_cmp(&x.score(config.metric)));
    runs.iter_mut().enumerate().for_each(|(i, r)| r.rank = i + 1);
    Ok(runs)
}

pub fn runs_to_csv(runs: &[SweepRun]) -> String {
    let mut out = String::from("rank,n_neighbors,min_dist,silhouette,trustworthiness,clusters,noise_fraction\n");
    for r in runs {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{},{:.6}\n",
            r.rank, r.n_neighbors, r.min_dist, r.silhouette, r.trustworthiness, r.clusters, r.noise_fraction
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_groups() -> Array2<f32> {
        Array2::from_shape_fn((80, 3), |(i, j)| if i < 40 { (i % 7) as f32 * 0.01 + j as f32 } else { 50.0 + (i % 5) as f32 * 0.01 })
    }

    #[test]
    fn single_config_ranks_first() {
        let data = two_groups();
        let (tr, va) = split_rows(80, 0.25, 3);
        let train = data.select(ndarray::Axis(0), &tr);
        let val = data.select(ndarray::Axis(0), &va);
        let config = SweepConfig {
            neighbors: vec![5],
            min_dists: vec![0.1],
            base: UmapParams { epochs: 50, ..UmapParams::default() },
            ..SweepConfig::default()
        };
        let runs = sweep(&train, &val, &config).unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!((runs[0].rank, runs[0].n_neighbors, runs[0].min_dist), (1, 5, 0.1));
    }

    #[test]
    fn table_has_grid_cardinality() {
        let data = two_groups();
        let (tr, va) = split_rows(80, 0.25, 3);
        let train = data.select(ndarray::Axis(0), &tr);
        let val = data.select(ndarray::Axis(0), &va);
        let config = SweepConfig {
            neighbors: vec![3, 5, 8],
            min_dists: vec![0.0, 0.5],
            base: UmapParams { epochs: 30, ..UmapParams::default() },
            metric: SweepMetric::Trustworthiness,
            ..SweepConfig::default()
        };
        let runs = sweep(&train, &val, &config).unwrap();
        assert_eq!(runs.len(), 6);
        assert!(runs.windows(2).all(|w| w[0].trustworthiness >= w[1].trustworthiness));
        assert_eq!(runs_to_csv(&runs).lines().count(), 7);
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let (tr, va) = split_rows(100, 0.1, 9);
        assert_eq!(va.len(), 10);
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn empty_grid_is_rejected() {
        let data = two_groups();
        let config = SweepConfig { neighbors: vec![], ..SweepConfig::default() };
        assert!(sweep(&data, &data, &config).is_err());
    }
}
