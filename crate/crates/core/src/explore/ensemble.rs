//! Per-offset averages of canny edge maps over a set of windows, on full
//! camera frames.

use std::path::{Path, PathBuf};

use image::GrayImage;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::canny::{canny, CannyParams, EdgeMap};
use super::region::Region;
use crate::ingest::{self, IngestError};
use crate::windows::WindowProvenance;

pub const CLIP_META_FILE: &str = "clip.json";

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("no usable windows: every selected window is missing frames")]
    NoWindows,
    #[error("frame {video}:{frame} is {got:?}, expected {expected:?}")]
    Dimensions { video: String, frame: u64, expected: (u32, u32), got: (u32, u32) },
    #[error("invalid parameters: {0}")]
    Parameter(String),
    #[error(transparent)]
    Io(#[from] IngestError),
}

/// Full-frame grayscale access by video and frame index.
pub trait FrameSource: Sync {
    fn has_frame(&self, video: &str, frame: u64) -> bool;
    fn frame(&self, video: &str, frame: u64) -> Result<GrayImage, IngestError>;
}

/// Frames stored as `<root>/<video>/<index:06>.png` (or `.pgm`).
#[derive(Debug, Clone)]
pub struct DirFrames {
    pub root: PathBuf,
}

impl DirFrames {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirFrames { root: root.into() }
    }
}

impl FrameSource for DirFrames {
    fn has_frame(&self, video: &str, frame: u64) -> bool {
        ingest::frame_path(&self.root.join(video), frame).is_some()
    }

    fn frame(&self, video: &str, frame: u64) -> Result<GrayImage, IngestError> {
        let dir = self.root.join(video);
        let path = ingest::frame_path(&dir, frame).ok_or(IngestError::MissingFrame { dir, index: frame })?;
        ingest::load_frame(&path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleClip {
    /// One map per window offset, normalized by the clip-wide maximum.
    pub frames: Vec<EdgeMap>,
    /// Windows that contributed.
    pub windows: usize,
    /// Windows skipped for missing frames.
    pub skipped: usize,
    pub region: Option<Region>,
    pub params: CannyParams,
}

/// Edge ensemble of `windows`, each covering `omega` frames from its start.
/// The per-offset mean is rescaled so the clip maximum is 1, which reduces
/// to `count / max count`.
pub fn ensemble(
    windows: &[WindowProvenance],
    omega: usize,
    source: &dyn FrameSource,
    params: &CannyParams,
    region: Option<Region>,
) -> Result<EnsembleClip, EnsembleError> {
    params.validate().map_err(EnsembleError::Parameter)?;
    if omega == 0 {
        return Err(EnsembleError::Parameter("window length must be at least 1".into()));
    }
    let usable: Vec<&WindowProvenance> = windows
        .iter()
        .filter(|w| {
            let start = w.start_frame as u64;
            let missing = (start..start + omega as u64).find(|f| !source.has_frame(&w.video_id, *f));
            if let Some(f) = missing {
                log::warn!("skipping window {}@{}: frame {} missing", w.video_id, w.start_frame, f);
            }
            missing.is_none()
        })
        .collect();
    if usable.is_empty() {
        return Err(EnsembleError::NoWindows);
    }
    let first = source.frame(&usable[0].video_id, usable[0].start_frame as u64)?;
    let dims = first.dimensions();

    let counts: Vec<Vec<u32>> = (0..omega as u64)
        .into_par_iter()
        .map(|t| {
            let mut acc = vec![0u32; (dims.0 * dims.1) as usize];
            for w in &usable {
                let frame = w.start_frame as u64 + t;
                let img = source.frame(&w.video_id, frame)?;
                if img.dimensions() != dims {
                    return Err(EnsembleError::Dimensions {
                        video: w.video_id.clone(),
                        frame,
                        expected: dims,
                        got: img.dimensions(),
                    });
                }
                let edges = canny(&img, params);
                acc.iter_mut().zip(&edges.data).for_each(|(a, e)| *a += *e as u32);
            }
            Ok(acc)
        })
        .collect::<Result<_, EnsembleError>>()?;

    let max = counts.iter().flatten().copied().max().unwrap_or(0);
    let frames = counts
        .into_iter()
        .map(|c| EdgeMap {
            width: dims.0,
            height: dims.1,
            data: c.into_iter().map(|v| if max > 0 { v as f64 / max as f64 } else { 0.0 }).collect(),
        })
        .collect();
    Ok(EnsembleClip { frames, windows: usable.len(), skipped: windows.len() - usable.len(), region, params: *params })
}

#[derive(Serialize)]
struct ClipMeta<'a> {
    region: Option<&'a Region>,
    windows: usize,
    skipped: usize,
    omega: usize,
    width: u32,
    height: u32,
    canny: &'a CannyParams,
}

/// Writes `000000.png ...` (one per offset) and `clip.json`.
pub fn export_clip(clip: &EnsembleClip, dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    std::fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
    let mut paths = Vec::with_capacity(clip.frames.len());
    for (t, map) in clip.frames.iter().enumerate() {
        let path = dir.join(format!("{t:06}.png"));
        map.to_image().save(&path).map_err(|source| IngestError::Image { path: path.clone(), source })?;
        paths.push(path);
    }
    let (width, height) = clip.frames.first().map_or((0, 0), |m| (m.width, m.height));
    let meta = ClipMeta {
        region: clip.region.as_ref(),
        windows: clip.windows,
        skipped: clip.skipped,
        omega: clip.frames.len(),
        width,
        height,
        canny: &clip.params,
    };
    let path = dir.join(CLIP_META_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&meta).expect("clip meta serializes") + "\n")
        .map_err(|e| IngestError::io(&path, e))?;
    Ok(paths)
}
