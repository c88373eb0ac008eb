//! UMAP fit, out-of-sample transform and model files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::curve::fit_ab;
use super::fuzzy::{calibrate_fuzzy, calibrate_sigma, local_rho};
use super::knn::{knn_exact, nearest};
use super::layout::{layout_sgd, optimize, EdgeSchedule, Init, LayoutParams};
use super::EmbedError;
use crate::ingest::IngestError;
use crate::windows::{self, WindowDataset, WindowProvenance};

pub const MODEL_FILE: &str = "embedding.json";
pub const COORDS_FILE: &str = "embedding.f32";
pub const TRANSFORM_EPOCHS: usize = 30;
/// Initial learning rate for transform refinement, a quarter of the fit rate.
const TRANSFORM_ALPHA: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UmapParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init: String,
    pub negative_rate: usize,
    pub learning_rate: f64,
}

impl Default for UmapParams {
    fn default() -> Self {
        UmapParams {
            n_neighbors: 200,
            min_dist: 0.0,
            spread: 1.0,
            epochs: 500,
            seed: 7,
            init: Init::Spectral.to_string(),
            negative_rate: 5,
            learning_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    pub coords: Array2<f32>,
    pub a: f64,
    pub b: f64,
    pub params: UmapParams,
    pub index: Vec<WindowProvenance>,
    /// Training matrix, needed by `umap_transform`.
    pub training: Option<Arc<Array2<f32>>>,
    /// Window dataset directory, relative to the model directory when saved.
    pub windows: Option<PathBuf>,
}

impl EmbeddingModel {
    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }
}

/// kNN graph, fuzzy set, curve fit and layout on a bare matrix.
pub fn umap_fit_matrix(data: &Array2<f32>, params: &UmapParams) -> Result<EmbeddingModel, EmbedError> {
    let init: Init = params.init.parse().map_err(EmbedError::Parameter)?;
    let graph = knn_exact(data.view(), params.n_neighbors)?;
    let fuzzy = calibrate_fuzzy(&graph)?;
    let (a, b) = fit_ab(params.min_dist, params.spread)?;
    let layout = LayoutParams {
        dims: 2,
        epochs: params.epochs,
        a,
        b,
        seed: params.seed,
        init,
        negative_rate: params.negative_rate,
        learning_rate: params.learning_rate,
    };
    let coords = layout_sgd(&fuzzy, &layout)?.mapv(|x| x as f32);
    if coords.iter().any(|x| !x.is_finite()) {
        return Err(EmbedError::NonFinite("embedding coordinates"));
    }
    Ok(EmbeddingModel {
        coords,
        a,
        b,
        params: params.clone(),
        index: Vec::new(),
        training: Some(Arc::new(data.clone())),
        windows: None,
    })
}

pub fn umap_fit(dataset: &WindowDataset, params: &UmapParams) -> Result<EmbeddingModel, EmbedError> {
    let mut model = umap_fit_matrix(&dataset.matrix, params)?;
    model.index = dataset.index.clone();
    Ok(model)
}

/// Membership weights of a new point's training neighbors. Exact duplicates
/// of training points take all the weight.
fn transform_weights(dists: &[f64], k: usize) -> Vec<f64> {
    if dists.contains(&0.0) {
        return dists.iter().map(|d| if *d == 0.0 { 1.0 } else { 0.0 }).collect();
    }
    let rho = local_rho(dists);
    let sigma = calibrate_sigma(dists, rho, (k as f64).log2());
    dists.iter().map(|d| (-(d - rho).max(0.0) / sigma).exp()).collect()
}

/// Places new points against the frozen training layout.
pub fn umap_transform(model: &EmbeddingModel, data: ArrayView2<'_, f32>) -> Result<Array2<f32>, EmbedError> {
    umap_transform_epochs(model, data, TRANSFORM_EPOCHS)
}

/// As `umap_transform` with an explicit number of refinement epochs; zero
/// returns the weighted-mean initialization.
pub fn umap_transform_epochs(
    model: &EmbeddingModel,
    data: ArrayView2<'_, f32>,
    epochs: usize,
) -> Result<Array2<f32>, EmbedError> {
    let training = model.training.as_ref().ok_or(EmbedError::NoTrainingData)?;
    if data.ncols() != training.ncols() {
        return Err(EmbedError::DimensionMismatch { expected: training.ncols(), got: data.ncols() });
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(EmbedError::NonFinite("transform input"));
    }
    let k = model.params.n_neighbors.min(training.nrows());
    let data = data.as_standard_layout();
    let train_view = training.view();
    let anchors = model.coords.mapv(|x| x as f64);
    let dims = anchors.ncols();

    let mut emb = Array2::zeros((data.nrows(), dims));
    let mut edges = Vec::new();
    for (i, row) in data.rows().into_iter().enumerate() {
        let found = nearest(&train_view, row.as_slice().expect("standard layout"), k, None);
        let dists: Vec<f64> = found.iter().map(|p| p.0).collect();
        let weights = transform_weights(&dists, k);
        let total: f64 = weights.iter().sum();
        for ((_, j), w) in found.iter().zip(&weights) {
            for d in 0..dims {
                emb[[i, d]] += w / total * anchors[[*j, d]];
            }
            if *w > 0.0 {
                edges.push((i, *j, *w));
            }
        }
    }
    if epochs > 0 && !edges.is_empty() {
        let params = LayoutParams {
            dims,
            epochs,
            a: model.a,
            b: model.b,
            seed: model.params.seed,
            init: Init::Random,
            negative_rate: model.params.negative_rate,
            learning_rate: model.params.learning_rate,
        };
        let schedule = EdgeSchedule::new(edges.into_iter(), epochs);
        let mut rng = ChaCha8Rng::seed_from_u64(model.params.seed.wrapping_add(1));
        optimize(&mut emb, Some(&anchors), &schedule, &params, TRANSFORM_ALPHA * params.learning_rate, &mut rng)?;
    }
    Ok(emb.mapv(|x| x as f32))
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    a: f64,
    b: f64,
    #[serde(flatten)]
    params: UmapParams,
    n: usize,
    dims: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    windows: Option<PathBuf>,
}

/// Writes `embedding.json`, `embedding.f32` and a copy of the provenance index.
pub fn write_model(dir: &Path, model: &EmbeddingModel) -> Result<(), EmbedError> {
    std::fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e)).map_err(windows::WindowError::from)?;
    let file = ModelFile {
        a: model.a,
        b: model.b,
        params: model.params.clone(),
        n: model.coords.nrows(),
        dims: model.coords.ncols(),
        windows: model.windows.clone(),
    };
    let json = serde_json::to_string_pretty(&file).expect("model serializes");
    let path = dir.join(MODEL_FILE);
    std::fs::write(&path, json + "\n").map_err(|e| windows::WindowError::from(IngestError::io(&path, e)))?;
    windows::write_f32_matrix(&dir.join(COORDS_FILE), &model.coords).map_err(windows::WindowError::from)?;
    windows::write_index(&dir.join(windows::INDEX_FILE), &model.index).map_err(windows::WindowError::from)?;
    Ok(())
}

/// Reads a model directory. With `with_training`, the referenced window
/// dataset is loaded so the model can transform new points.
pub fn read_model(dir: &Path, with_training: bool) -> Result<EmbeddingModel, EmbedError> {
    let path = dir.join(MODEL_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| windows::WindowError::from(IngestError::io(&path, e)))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| EmbedError::Format(format!("{}: {e}", path.display())))?;
    let coords = windows::read_f32_matrix(&dir.join(COORDS_FILE), file.dims)?;
    if coords.nrows() != file.n {
        return Err(EmbedError::Format(format!("{} rows, model says {}", coords.nrows(), file.n)));
    }
    let index = windows::read_index(&dir.join(windows::INDEX_FILE))?;
    if index.len() != file.n {
        return Err(EmbedError::Format(format!("index has {} rows, model has {}", index.len(), file.n)));
    }
    let training = match (&file.windows, with_training) {
        (Some(rel), true) => {
            let ds = windows::read_dataset(&dir.join(rel))?;
            if ds.len() != file.n {
                return Err(EmbedError::Format(format!("window dataset has {} rows, model has {}", ds.len(), file.n)));
            }
            Some(Arc::new(ds.matrix))
        }
        _ => None,
    };
    Ok(EmbeddingModel { coords, a: file.a, b: file.b, params: file.params, index, training, windows: file.windows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_params(k: usize) -> UmapParams {
        UmapParams { n_neighbors: k, epochs: 100, ..UmapParams::default() }
    }

    #[test]
    fn identical_points_survive() {
        let data = Array2::<f32>::from_elem((40, 3), 1.5);
        let model = umap_fit_matrix(&data, &small_params(5)).unwrap();
        assert!(model.coords.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn neighbors_must_be_fewer_than_points() {
        let data = Array2::<f32>::zeros((10, 2));
        assert!(matches!(umap_fit_matrix(&data, &small_params(10)), Err(EmbedError::NeighborCount { .. })));
    }

    #[test]
    fn training_point_maps_to_itself() {
        let data = Array2::from_shape_fn((60, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f32 + i as f32 * 0.01);
        let model = umap_fit_matrix(&data, &small_params(6)).unwrap();
        let again = umap_transform_epochs(&model, data.slice(ndarray::s![10..11, ..]), 0).unwrap();
        for d in 0..2 {
            assert!((again[[0, d]] - model.coords[[10, d]]).abs() < 1e-3);
        }
    }

    #[test]
    fn equidistant_point_starts_at_midpoint() {
        let data = array![[0.0f32, 0.0], [2.0, 0.0], [1.0, 5.0]];
        let model = EmbeddingModel {
            coords: array![[0.0f32, 0.0], [4.0, 2.0], [9.0, 9.0]],
            a: 1.9,
            b: 0.8,
            params: UmapParams { n_neighbors: 2, ..UmapParams::default() },
            index: Vec::new(),
            training: Some(Arc::new(data)),
            windows: None,
        };
        let out = umap_transform_epochs(&model, array![[1.0f32, 0.0]].view(), 0).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![2.0, 1.0]);
    }

    #[test]
    fn transform_checks_dimension() {
        let data = Array2::from_shape_fn((20, 3), |(i, j)| (i * 3 + j) as f32);
        let model = umap_fit_matrix(&data, &small_params(4)).unwrap();
        let bad = Array2::<f32>::zeros((2, 5));
        assert!(matches!(umap_transform(&model, bad.view()), Err(EmbedError::DimensionMismatch { .. })));
    }

    #[test]
    fn model_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 5 + j) % 13) as f32);
        let mut model = umap_fit_matrix(&data, &small_params(4)).unwrap();
        model.index = (0..30).map(|i| WindowProvenance { video_id: "v".into(), start_frame: i }).collect();
        write_model(dir.path(), &model).unwrap();
        let back = read_model(dir.path(), false).unwrap();
        assert_eq!(back.coords, model.coords);
        assert_eq!(back.params, model.params);
        assert_eq!(back.index, model.index);
        assert_eq!((back.a, back.b), (model.a, model.b));
    }
}
