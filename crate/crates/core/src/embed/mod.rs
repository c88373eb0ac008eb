//! Two-dimensional projection of window datasets: UMAP, a PCA baseline and a
//! hyperparameter sweep.

pub mod curve;
pub mod fuzzy;
pub mod knn;
pub mod layout;
pub mod metrics;
pub mod pca;
pub mod sweep;
pub mod umap;

pub use curve::fit_ab;
pub use fuzzy::{calibrate_fuzzy, FuzzyGraph};
pub use knn::{knn_exact, NeighborGraph};
pub use layout::{layout_sgd, Init, LayoutParams};
pub use pca::{pca_fit, PcaModel};
pub use sweep::{sweep, SweepConfig, SweepMetric, SweepRun};
pub use umap::{umap_fit, umap_transform, EmbeddingModel, UmapParams};

use thiserror::Error;

use crate::windows::WindowError;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("need more points than neighbors (k = {k}, n = {n})")]
    NeighborCount { k: usize, n: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("curve fit did not converge after {0} iterations")]
    Convergence(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("model has no training data attached")]
    NoTrainingData,
    #[error("model format: {0}")]
    Format(String),
    #[error(transparent)]
    Windows(#[from] WindowError),
}
