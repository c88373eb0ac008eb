//! Stage runners over on-disk artifacts, and the orchestrated run.
//!
//! Every stage reads its inputs from files and writes its outputs to files,
//! so running the stages one by one reproduces `run_pipeline` exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::embed::pca::pca_transform;
use crate::embed::sweep::{runs_to_csv, split_rows, sweep, SweepConfig, SweepRun};
use crate::embed::umap::{read_model, write_model};
use crate::embed::{pca_fit, umap_fit, EmbedError, UmapParams};
use crate::explore::{ensemble, export_clip, query_region, CannyParams, DirFrames, EnsembleClip, EnsembleError, QueryResult, Region};
use crate::ingest::{read_detections, read_pose_csv, IngestError};
use crate::quality::{quality_report, reports_to_csv, select_videos, tradeoff_to_csv, QualityError};
use crate::series::{clean_pose, displacement_histogram, prepared_tracks, read_clean_csv, write_clean_csv, CleanConfig, SeriesError};
use crate::spotlight::{associate_tracks, extract_segments, filter_confident, length_histogram, read_segments, write_segments, SpotlightConfig};
use crate::windows::{self, build_dataset, read_dataset, write_dataset, WindowError};

pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const QUALITY_FILE: &str = "quality.csv";
pub const TRADEOFF_FILE: &str = "tradeoff.csv";
pub const SELECTED_FILE: &str = "selected.txt";
pub const REJECTED_FILE: &str = "rejected.txt";
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Windows(#[from] WindowError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("{0}")]
    Input(String),
}

impl PipelineError {
    /// 2 for validation errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e).into())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| IngestError::io(path, e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

/// `path` itself when it is a file, else its files with extension `ext`,
/// sorted by name.
pub fn list_inputs(path: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(|e| IngestError::io(path, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

// ---------------------------------------------------------------------------
// spotlight

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpotlightSummary {
    pub detection_files: usize,
    pub frames: usize,
    pub boxes: usize,
    pub confident_boxes: usize,
    pub tracks: usize,
    pub segments: usize,
    pub segment_frames: usize,
    pub segments_at_least_8s: usize,
}

/// Detections (file or directory of `.jsonl`) to `segments.jsonl`.
pub fn run_spotlight(detections: &Path, out_dir: &Path, config: &SpotlightConfig) -> Result<SpotlightSummary> {
    config.validate().map_err(PipelineError::Validation)?;
    let files = list_inputs(detections, "jsonl")?;
    if files.is_empty() {
        return Err(PipelineError::Input(format!("no detection files in {}", detections.display())));
    }
    let per_video: Vec<_> = files
        .par_iter()
        .map(|f| -> Result<_> {
            let series = read_detections(f)?;
            let confident = filter_confident(&series, config.confidence_threshold);
            let tracks = associate_tracks(&confident, config.epsilon, config.grace_delta);
            let segments =
                extract_segments(&series.video_id, &tracks, config.min_frames, config.frame_bounds, config.grace_delta);
            let long = length_histogram(&segments, series.fps, 1.0).at_least_8s;
            Ok((series.frames.len(), series.box_count(), confident.box_count(), tracks.len(), segments, long))
        })
        .collect::<Result<_>>()?;
    let mut summary = SpotlightSummary {
        detection_files: files.len(),
        frames: 0,
        boxes: 0,
        confident_boxes: 0,
        tracks: 0,
        segments: 0,
        segment_frames: 0,
        segments_at_least_8s: 0,
    };
    let mut all = Vec::new();
    for (frames, boxes, confident, tracks, segments, long) in per_video {
        summary.frames += frames;
        summary.boxes += boxes;
        summary.confident_boxes += confident;
        summary.tracks += tracks;
        summary.segments += segments.len();
        summary.segment_frames += segments.iter().map(|s| s.frame_count()).sum::<usize>();
        summary.segments_at_least_8s += long;
        all.extend(segments);
    }
    create_dir(out_dir)?;
    write_segments(&out_dir.join(SEGMENTS_FILE), &all)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// quality

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualitySummary {
    pub pose_files: usize,
    pub unlinked: usize,
    pub assessed: usize,
    pub selected: usize,
}

/// Pose files to `quality.csv`, `tradeoff.csv` and `selected.txt`. With
/// `segments`, only pose files named after a kept segment are assessed.
pub fn run_quality<S: AsRef<str> + Sync>(
    pose: &Path,
    segments: Option<&Path>,
    out_dir: &Path,
    parts: &[S],
    tau: f64,
    threshold: f64,
) -> Result<QualitySummary> {
    if !(0.0..=1.0).contains(&threshold) || !(0.0..=1.0).contains(&tau) {
        return Err(PipelineError::Validation(format!("tau {tau} and threshold {threshold} must lie in [0, 1]")));
    }
    let files = list_inputs(pose, "csv")?;
    let linked: Vec<PathBuf> = match segments {
        Some(seg_path) => {
            let ids: BTreeSet<String> = read_segments(seg_path)?.iter().map(|s| s.segment_id()).collect();
            files.iter().filter(|f| ids.contains(&stem(f))).cloned().collect()
        }
        None => files.clone(),
    };
    let reports = linked
        .par_iter()
        .map(|f| -> Result<_> { Ok(quality_report(&read_pose_csv(f)?, parts, tau)?) })
        .collect::<Result<Vec<_>>>()?;
    let (selected, tradeoff) = select_videos(&reports, threshold);
    create_dir(out_dir)?;
    write_text(&out_dir.join(QUALITY_FILE), &reports_to_csv(&reports))?;
    write_text(&out_dir.join(TRADEOFF_FILE), &tradeoff_to_csv(&tradeoff))?;
    write_text(&out_dir.join(SELECTED_FILE), &selected.iter().map(|s| format!("{s}\n")).collect::<String>())?;
    Ok(QualitySummary {
        pose_files: files.len(),
        unlinked: files.len() - linked.len(),
        assessed: reports.len(),
        selected: selected.len(),
    })
}

// ---------------------------------------------------------------------------
// smooth

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothSummary {
    pub videos: usize,
    pub cleaned: usize,
    pub rejected: usize,
    pub frames: usize,
    pub samples: usize,
    pub masked: usize,
    pub removed_by_smoothing: usize,
    pub displacement_pairs: usize,
    pub displacement_within_d_max: usize,
}

/// Pose files (restricted to `selected` ids when given) to one clean series
/// CSV per video plus `rejected.txt`.
pub fn run_smooth(pose: &Path, selected: Option<&Path>, out_dir: &Path, config: &CleanConfig) -> Result<SmoothSummary> {
    let mut files = list_inputs(pose, "csv")?;
    if let Some(sel) = selected {
        let keep: BTreeSet<String> = read_id_list(sel)?.into_iter().collect();
        files.retain(|f| keep.contains(&stem(f)));
    }
    create_dir(out_dir)?;
    let raw_config = CleanConfig { smooth: false, ..config.clone() };
    let results = files
        .par_iter()
        .map(|f| -> Result<_> {
            let pose = read_pose_csv(f)?;
            let raw = prepared_tracks(&pose, &raw_config)?;
            let masked_obs: usize = raw.iter().map(|t| t.observed()).sum();
            let hist = displacement_histogram(&raw, 1.0, config.d_max);
            let within = (hist.fraction_within * hist.total_pairs as f64).round() as usize;
            let smoothed_obs: usize = prepared_tracks(&pose, config)?.iter().map(|t| t.observed()).sum();
            let samples = pose.n_frames() * config.parts.len();
            let cleaned = match clean_pose(&pose, config) {
                Ok(series) => {
                    write_clean_csv(&out_dir.join(format!("{}.csv", stem(f))), &series)?;
                    Ok(())
                }
                Err(e @ (SeriesError::TooFewObservations { .. } | SeriesError::NoObservations)) => Err(e.to_string()),
                Err(e) => return Err(e.into()),
            };
            Ok((stem(f), pose.n_frames(), samples, samples - masked_obs, masked_obs - smoothed_obs, hist.total_pairs, within, cleaned))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = SmoothSummary {
        videos: files.len(),
        cleaned: 0,
        rejected: 0,
        frames: 0,
        samples: 0,
        masked: 0,
        removed_by_smoothing: 0,
        displacement_pairs: 0,
        displacement_within_d_max: 0,
    };
    let mut rejected = String::new();
    for (id, frames, samples, masked, removed, pairs, within, cleaned) in results {
        summary.samples += samples;
        summary.masked += masked;
        summary.removed_by_smoothing += removed;
        summary.displacement_pairs += pairs;
        summary.displacement_within_d_max += within;
        match cleaned {
            Ok(()) => {
                summary.cleaned += 1;
                summary.frames += frames;
            }
            Err(reason) => {
                summary.rejected += 1;
                rejected.push_str(&format!("{id}\t{reason}\n"));
            }
        }
    }
    write_text(&out_dir.join(REJECTED_FILE), &rejected)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// windows

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowsSummary {
    pub videos: usize,
    pub windows: usize,
    pub dim: usize,
}

/// Clean series CSVs to a window dataset directory.
pub fn run_windows(series: &Path, out_dir: &Path, omega: usize, stride: usize, cap: Option<usize>, seed: u64) -> Result<WindowsSummary> {
    let files = list_inputs(series, "csv")?;
    let videos = files
        .par_iter()
        .map(|f| -> Result<_> {
            let mut s = read_clean_csv(f)?;
            s.video_id = stem(f);
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = build_dataset(&videos, omega, stride, cap, seed)?;
    if ds.is_empty() {
        return Err(WindowError::Empty.into());
    }
    write_dataset(out_dir, &ds)?;
    Ok(WindowsSummary { videos: videos.len(), windows: ds.len(), dim: ds.dim() })
}

// ---------------------------------------------------------------------------
// embedding

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbedSummary {
    pub points: usize,
    pub n_neighbors: usize,
    pub a: f64,
    pub b: f64,
}

/// Path of `target` relative to `base` when they share a prefix.
fn relative_to(target: &Path, base: &Path) -> PathBuf {
    let t: Vec<_> = target.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 && target.is_absolute() != base.is_absolute() {
        return std::fs::canonicalize(target).unwrap_or_else(|_| target.to_path_buf());
    }
    let mut rel = PathBuf::new();
    for _ in common..b.len() {
        rel.push("..");
    }
    for c in &t[common..] {
        rel.push(c);
    }
    rel
}

/// Window dataset to an embedding model directory.
pub fn run_umap(windows_dir: &Path, out_dir: &Path, params: &UmapParams) -> Result<EmbedSummary> {
    let ds = read_dataset(windows_dir)?;
    let mut model = umap_fit(&ds, params)?;
    model.windows = Some(relative_to(windows_dir, out_dir));
    write_model(out_dir, &model)?;
    Ok(EmbedSummary { points: model.len(), n_neighbors: params.n_neighbors, a: model.a, b: model.b })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaSummary {
    pub points: usize,
    pub dims: usize,
    pub explained: Vec<f64>,
}

/// PCA projection written as `pca.json`, `embedding.f32` and the index.
pub fn run_pca(windows_dir: &Path, out_dir: &Path, dims: usize) -> Result<PcaSummary> {
    let ds = read_dataset(windows_dir)?;
    let model = pca_fit(ds.matrix.view(), dims)?;
    let coords = pca_transform(&model, ds.matrix.view())?.mapv(|x| x as f32);
    create_dir(out_dir)?;
    write_json(&out_dir.join("pca.json"), &model)?;
    windows::write_f32_matrix(&out_dir.join(crate::embed::umap::COORDS_FILE), &coords)?;
    windows::write_index(&out_dir.join(windows::INDEX_FILE), &ds.index)?;
    Ok(PcaSummary { points: ds.len(), dims, explained: model.explained })
}

/// Hyperparameter sweep on a seeded train/validation split of a dataset;
/// writes `sweep.csv`.
pub fn run_sweep(windows_dir: &Path, out_dir: &Path, config: &SweepConfig, val_fraction: f64, seed: u64) -> Result<Vec<SweepRun>> {
    if !(0.0 < val_fraction && val_fraction < 1.0) {
        return Err(PipelineError::Validation(format!("validation fraction must be in (0, 1), got {val_fraction}")));
    }
    let ds = read_dataset(windows_dir)?;
    let (train, val) = split_rows(ds.len(), val_fraction, seed);
    let runs = sweep(&ds.select(&train).matrix, &ds.select(&val).matrix, config)?;
    create_dir(out_dir)?;
    write_text(&out_dir.join("sweep.csv"), &runs_to_csv(&runs))?;
    Ok(runs)
}

/// Region query against a model directory (the UMAP or PCA output).
pub fn run_query(model_dir: &Path, region: &Region) -> Result<QueryResult> {
    let coords = windows::read_f32_matrix(&model_dir.join(crate::embed::umap::COORDS_FILE), 2)?;
    let index = windows::read_index(&model_dir.join(windows::INDEX_FILE))?;
    Ok(query_region(&coords, &index, region))
}

/// Edge ensemble of the windows in `region`. The window length comes from
/// the model's dataset metadata.
pub fn run_ensemble(model_dir: &Path, region: &Region, frames: &Path, params: &CannyParams, out_dir: Option<&Path>) -> Result<EnsembleClip> {
    params.validate().map_err(PipelineError::Validation)?;
    let model = read_model(model_dir, false)?;
    let omega = match &model.windows {
        Some(rel) => windows::read_meta(&model_dir.join(rel))?.omega,
        None => return Err(PipelineError::Input("model does not reference a window dataset".into())),
    };
    let hits = query_region(&model.coords, &model.index, region);
    if hits.ids.is_empty() {
        return Err(EnsembleError::NoWindows.into());
    }
    let selected: Vec<_> = hits.ids.iter().map(|&i| model.index[i].clone()).collect();
    let clip = ensemble(&selected, omega, &DirFrames::new(frames), params, Some(*region))?;
    if let Some(dir) = out_dir {
        export_clip(&clip, dir)?;
    }
    Ok(clip)
}

// ---------------------------------------------------------------------------
// orchestration

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counts {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spotlight: Option<SpotlightSummary>,
    pub quality: QualitySummary,
    pub smooth: SmoothSummary,
    pub windows: WindowsSummary,
    pub embedding: EmbedSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub params: Value,
    pub counts: Counts,
}

pub fn report_value(report: &Report) -> Value {
    json!({ "params": report.params, "counts": report.counts })
}

/// Runs every stage into `config.out` and writes `report.json` (counts and
/// parameter echo) and `timings.json`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Report> {
    config.validate().map_err(PipelineError::Validation)?;
    if !config.pose.exists() {
        return Err(PipelineError::Input(format!("pose input {} does not exist", config.pose.display())));
    }
    if let Some(d) = &config.detections {
        if !d.exists() {
            return Err(PipelineError::Input(format!("detection input {} does not exist", d.display())));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::Input(e.to_string()))?;
    pool.install(|| run_stages(config))
}

fn run_stages(config: &PipelineConfig) -> Result<Report> {
    let out = &config.out;
    let dir = |name: &str| out.join(name);
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let spotlight = match &config.detections {
        Some(d) => {
            let s = run_spotlight(d, &dir("spotlight"), &config.spotlight)?;
            lap("spotlight", &mut timings);
            Some(s)
        }
        None => None,
    };
    let segments = spotlight.as_ref().map(|_| dir("spotlight").join(SEGMENTS_FILE));
    let quality = run_quality(
        &config.pose,
        segments.as_deref(),
        &dir("quality"),
        &config.clean.parts,
        config.clean.tau,
        config.geomean_threshold,
    )?;
    lap("quality", &mut timings);
    let smooth = run_smooth(&config.pose, Some(&dir("quality").join(SELECTED_FILE)), &dir("series"), &config.clean)?;
    lap("smooth", &mut timings);
    let windows = run_windows(&dir("series"), &dir("windows"), config.omega, config.stride, config.cap, config.umap.seed)?;
    lap("windows", &mut timings);
    let embedding = run_umap(&dir("windows"), &dir("embedding"), &config.umap)?;
    lap("embedding", &mut timings);

    let report = Report { params: config.echo(), counts: Counts { spotlight, quality, smooth, windows, embedding } };
    write_json(&out.join(REPORT_FILE), &report_value(&report))?;
    write_json(&out.join(TIMINGS_FILE), &timings)?;
    Ok(report)
}
