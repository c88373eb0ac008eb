//! Sliding behavioral windows over clean, normalized series.
//!
//! A window of `omega` frames over `f` bodyparts is flattened frame-major:
//! `[x_1, y_1, ..., x_f, y_f]` for its first frame, then the second, and so on.

use std::io::{BufWriter, Read as _, Write as _};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::IngestError;
use crate::series::CleanSeries;

pub const DEFAULT_OMEGA: usize = 60;
pub const DEFAULT_STRIDE: usize = 1;

pub const MATRIX_FILE: &str = "windows.f32";
pub const INDEX_FILE: &str = "windows.index.csv";
pub const META_FILE: &str = "windows.meta.json";

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("video {video:?} has bodyparts {found:?}, expected {expected:?}")]
    BodypartMismatch { video: String, expected: Vec<String>, found: Vec<String> },
    #[error("window size and stride must be at least 1")]
    BadGeometry,
    #[error("no windows to build a dataset from")]
    Empty,
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorWindow {
    pub window_id: usize,
    pub video_id: String,
    pub start_frame: usize,
    pub vector: Vec<f64>,
}

/// `max(0, floor((n - omega) / stride) + 1)`
pub fn window_count(n_frames: usize, omega: usize, stride: usize) -> usize {
    if n_frames < omega {
        0
    } else {
        (n_frames - omega) / stride + 1
    }
}

/// Windows starting at frames `0, s, 2s, ...`; ids count from zero within the video.
pub fn make_windows(series: &CleanSeries, omega: usize, stride: usize) -> Vec<BehaviorWindow> {
    assert!(omega >= 1 && stride >= 1, "window size and stride must be at least 1");
    (0..window_count(series.n_frames(), omega, stride))
        .map(|w| {
            let start = w * stride;
            let vector = series.frames[start..start + omega]
                .iter()
                .flat_map(|row| row.iter().flat_map(|p| [p.x, p.y]))
                .collect();
            BehaviorWindow { window_id: w, video_id: series.video_id.clone(), start_frame: start, vector }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowProvenance {
    pub video_id: String,
    pub start_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub omega: usize,
    pub stride: usize,
    pub f: usize,
    pub bodyparts: Vec<String>,
    pub n: usize,
}

/// All windows of a run: one matrix row per window, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub matrix: Array2<f32>,
    /// Row `i` is window id `i`.
    pub index: Vec<WindowProvenance>,
    pub omega: usize,
    pub stride: usize,
    pub bodyparts: Vec<String>,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.omega * 2 * self.bodyparts.len()
    }

    pub fn meta(&self) -> WindowMeta {
        WindowMeta {
            omega: self.omega,
            stride: self.stride,
            f: self.bodyparts.len(),
            bodyparts: self.bodyparts.clone(),
            n: self.len(),
        }
    }

    /// Rows `rows` (in the given order) as a new dataset.
    pub fn select(&self, rows: &[usize]) -> WindowDataset {
        WindowDataset {
            matrix: self.matrix.select(ndarray::Axis(0), rows),
            index: rows.iter().map(|&r| self.index[r].clone()).collect(),
            omega: self.omega,
            stride: self.stride,
            bodyparts: self.bodyparts.clone(),
        }
    }
}

/// Concatenates the windows of every video. With `cap`, keeps a uniform
/// random subset of `cap` rows (order preserved) drawn with `seed`.
pub fn build_dataset(
    videos: &[CleanSeries],
    omega: usize,
    stride: usize,
    cap: Option<usize>,
    seed: u64,
) -> Result<WindowDataset, WindowError> {
    if omega == 0 || stride == 0 {
        return Err(WindowError::BadGeometry);
    }
    let bodyparts = videos.first().ok_or(WindowError::Empty)?.bodyparts.clone();
    for v in videos {
        if v.bodyparts != bodyparts {
            return Err(WindowError::BodypartMismatch {
                video: v.video_id.clone(),
                expected: bodyparts.clone(),
                found: v.bodyparts.clone(),
            });
        }
    }
    let dim = omega * 2 * bodyparts.len();
    let mut data = Vec::new();
    let mut index = Vec::new();
    for v in videos {
        for w in make_windows(v, omega, stride) {
            data.extend(w.vector.iter().map(|&x| x as f32));
            index.push(WindowProvenance { video_id: w.video_id, start_frame: w.start_frame });
        }
    }
    let matrix = Array2::from_shape_vec((index.len(), dim), data).expect("row lengths agree");
    let full = WindowDataset { matrix, index, omega, stride, bodyparts };
    Ok(match cap {
        Some(cap) if cap < full.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows = rand::seq::index::sample(&mut rng, full.len(), cap).into_vec();
            rows.sort_unstable();
            full.select(&rows)
        }
        _ => full,
    })
}

pub fn write_f32_matrix(path: &Path, matrix: &Array2<f32>) -> Result<(), IngestError> {
    let file = std::fs::File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for v in matrix.iter() {
        out.write_all(&v.to_le_bytes()).map_err(|e| IngestError::io(path, e))?;
    }
    out.flush().map_err(|e| IngestError::io(path, e))
}

pub fn read_f32_matrix(path: &Path, cols: usize) -> Result<Array2<f32>, WindowError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| IngestError::io(path, e))?;
    if cols == 0 || bytes.len() % (4 * cols) != 0 {
        return Err(WindowError::Format(format!(
            "{}: {} bytes is not a whole number of {cols}-column f32 rows",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Array2::from_shape_vec((data.len() / cols, cols), data).expect("divisible"))
}

pub fn write_index(path: &Path, index: &[WindowProvenance]) -> Result<(), IngestError> {
    let mut out = String::from("window_id,video_id,start_frame\n");
    for (i, p) in index.iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", p.video_id, p.start_frame));
    }
    std::fs::write(path, out).map_err(|e| IngestError::io(path, e))
}

pub fn read_index(path: &Path) -> Result<Vec<WindowProvenance>, WindowError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || WindowError::Format(format!("{}: line {}: expected window_id,video_id,start_frame", path.display(), i + 1));
        // video ids may not contain commas, but split from both ends anyway
        let (id, rest) = line.split_once(',').ok_or_else(bad)?;
        let (video, start) = rest.rsplit_once(',').ok_or_else(bad)?;
        let id: usize = id.parse().map_err(|_| bad())?;
        if id != out.len() {
            return Err(bad());
        }
        out.push(WindowProvenance { video_id: video.to_string(), start_frame: start.parse().map_err(|_| bad())? });
    }
    Ok(out)
}

pub fn write_dataset(dir: &Path, ds: &WindowDataset) -> Result<(), IngestError> {
    std::fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
    write_f32_matrix(&dir.join(MATRIX_FILE), &ds.matrix)?;
    write_index(&dir.join(INDEX_FILE), &ds.index)?;
    let meta = serde_json::to_string_pretty(&ds.meta()).expect("meta serializes");
    let path = dir.join(META_FILE);
    std::fs::write(&path, meta + "\n").map_err(|e| IngestError::io(path, e))
}

/// Dataset metadata alone, without loading the matrix.
pub fn read_meta(dir: &Path) -> Result<WindowMeta, WindowError> {
    let meta_path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| IngestError::io(&meta_path, e))?;
    serde_json::from_str(&text).map_err(|e| WindowError::Format(format!("{}: {e}", meta_path.display())))
}

pub fn read_dataset(dir: &Path) -> Result<WindowDataset, WindowError> {
    let meta = read_meta(dir)?;
    let dim = meta.omega * 2 * meta.f;
    let matrix = read_f32_matrix(&dir.join(MATRIX_FILE), dim)?;
    let index = read_index(&dir.join(INDEX_FILE))?;
    if matrix.nrows() != meta.n || index.len() != meta.n || meta.bodyparts.len() != meta.f {
        return Err(WindowError::Format(format!(
            "{}: meta says {} rows, matrix has {}, index has {}",
            dir.display(),
            meta.n,
            matrix.nrows(),
            index.len()
        )));
    }
    Ok(WindowDataset { matrix, index, omega: meta.omega, stride: meta.stride, bodyparts: meta.bodyparts })
}
