//! Spotlight segment extraction: contiguous single-subject frame ranges built
//! from per-frame detections.
//!
//! Each frame is processed in order. Boxes below the confidence threshold are
//! dropped, pairs whose grace-expanded rectangles overlap are flagged as
//! colliding, and the remaining boxes are matched one-to-one to tracks alive
//! in the previous frame whose last center lies within `epsilon`. A track
//! matched to a colliding box ends there; unmatched tracks end; unmatched
//! non-colliding boxes open new tracks.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::{BoundingBox, FrameDetectionSeries, IngestError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameBounds {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotlightConfig {
    pub confidence_threshold: f64,
    /// Pixels added to each box edge for cropping and collision tests.
    pub grace_delta: f64,
    /// Maximum center displacement between consecutive frames of one track.
    pub epsilon: f64,
    pub min_frames: usize,
    pub frame_bounds: FrameBounds,
}

impl Default for SpotlightConfig {
    fn default() -> Self {
        SpotlightConfig {
            confidence_threshold: 0.75,
            grace_delta: 50.0,
            epsilon: 50.0,
            min_frames: 50,
            frame_bounds: FrameBounds { width: 1280.0, height: 720.0 },
        }
    }
}

impl SpotlightConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence_threshold));
        }
        for (name, v) in [
            ("delta", self.grace_delta),
            ("epsilon", self.epsilon),
            ("width", self.frame_bounds.width),
            ("height", self.frame_bounds.height),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if self.min_frames < 1 {
            return Err("min-frames must be at least 1".into());
        }
        Ok(())
    }
}

/// Keeps boxes with `confidence >= threshold`. Emptied frames are retained.
pub fn filter_confident(series: &FrameDetectionSeries, threshold: f64) -> FrameDetectionSeries {
    let mut out = series.clone();
    for frame in &mut out.frames {
        frame.boxes.retain(|b| b.confidence >= threshold);
    }
    out
}

/// Index pairs `(i, j)`, `i < j`, whose `delta`-expanded rectangles overlap
/// with positive area.
pub fn find_collisions(boxes: &[BoundingBox], delta: f64) -> Vec<(usize, usize)> {
    let grown: Vec<BoundingBox> = boxes.iter().map(|b| b.expanded(delta)).collect();
    let mut pairs = Vec::new();
    for i in 0..grown.len() {
        for j in i + 1..grown.len() {
            let (a, b) = (&grown[i], &grown[j]);
            let w = a.x1.min(b.x1) - a.x0.max(b.x0);
            let h = a.y1.min(b.y1) - a.y0.max(b.y0);
            if w > 0.0 && h > 0.0 {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub frame: u64,
    /// Position of the box within its frame's (confidence-filtered) box list.
    pub box_index: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociatedTrack {
    pub track_id: usize,
    pub points: Vec<TrackPoint>,
}

impl AssociatedTrack {
    pub fn start_frame(&self) -> u64 {
        self.points[0].frame
    }

    pub fn end_frame(&self) -> u64 {
        self.points[self.points.len() - 1].frame
    }

    fn last_center(&self) -> (f64, f64) {
        self.points[self.points.len() - 1].bbox.center()
    }
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Greedy nearest-center association (see module docs). Tracks are returned
/// ordered by `track_id`, which is assigned in creation order.
pub fn associate_tracks(series: &FrameDetectionSeries, epsilon: f64, grace_delta: f64) -> Vec<AssociatedTrack> {
    let mut finished: Vec<AssociatedTrack> = Vec::new();
    let mut active: Vec<AssociatedTrack> = Vec::new();
    let mut next_id = 0;

    for frame in &series.frames {
        let boxes = &frame.boxes;
        let mut colliding = vec![false; boxes.len()];
        for (i, j) in find_collisions(boxes, grace_delta) {
            colliding[i] = true;
            colliding[j] = true;
        }

        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, track) in active.iter().enumerate() {
            if track.end_frame() + 1 != frame.frame {
                continue;
            }
            let last = track.last_center();
            for (bi, b) in boxes.iter().enumerate() {
                let d = distance(last, b.center());
                if d <= epsilon {
                    candidates.push((d, bi, ti));
                }
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut box_taken = vec![false; boxes.len()];
        let mut extension: Vec<Option<usize>> = vec![None; active.len()];
        let mut track_taken = vec![false; active.len()];
        for (_, bi, ti) in candidates {
            if box_taken[bi] || track_taken[ti] {
                continue;
            }
            box_taken[bi] = true;
            track_taken[ti] = true;
            if !colliding[bi] {
                extension[ti] = Some(bi);
            }
        }

        let mut still_active = Vec::with_capacity(active.len());
        for (mut track, ext) in active.into_iter().zip(extension) {
            match ext {
                Some(bi) => {
                    track.points.push(TrackPoint { frame: frame.frame, box_index: bi, bbox: boxes[bi] });
                    still_active.push(track);
                }
                None => finished.push(track),
            }
        }
        for (bi, b) in boxes.iter().enumerate() {
            if !box_taken[bi] && !colliding[bi] {
                still_active.push(AssociatedTrack {
                    track_id: next_id,
                    points: vec![TrackPoint { frame: frame.frame, box_index: bi, bbox: *b }],
                });
                next_id += 1;
            }
        }
        active = still_active;
    }
    finished.extend(active);
    finished.sort_by_key(|t| t.track_id);
    finished
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotlightSegment {
    pub video_id: String,
    pub track_id: usize,
    #[serde(rename = "start")]
    pub start_frame: u64,
    #[serde(rename = "end")]
    pub end_frame: u64,
    /// `[x0, y0, x1, y1]` per frame: box grown by the grace margin, clamped to the frame.
    pub crops: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub centers: Vec<[f64; 2]>,
}

impl SpotlightSegment {
    pub fn frame_count(&self) -> usize {
        (self.end_frame - self.start_frame + 1) as usize
    }

    /// Identifier of the spotlight video cut from this segment.
    pub fn segment_id(&self) -> String {
        format!("{}_t{}", self.video_id, self.track_id)
    }
}

pub fn crop_rect(b: &BoundingBox, delta: f64, bounds: FrameBounds) -> [f64; 4] {
    let g = b.expanded(delta);
    [
        g.x0.clamp(0.0, bounds.width),
        g.y0.clamp(0.0, bounds.height),
        g.x1.clamp(0.0, bounds.width),
        g.y1.clamp(0.0, bounds.height),
    ]
}

/// Drops tracks shorter than `min_frames` and records per-frame crops.
pub fn extract_segments(
    video_id: &str,
    tracks: &[AssociatedTrack],
    min_frames: usize,
    bounds: FrameBounds,
    grace_delta: f64,
) -> Vec<SpotlightSegment> {
    tracks
        .iter()
        .filter(|t| t.points.len() >= min_frames)
        .map(|t| SpotlightSegment {
            video_id: video_id.to_string(),
            track_id: t.track_id,
            start_frame: t.start_frame(),
            end_frame: t.end_frame(),
            crops: t.points.iter().map(|p| crop_rect(&p.bbox, grace_delta, bounds)).collect(),
            centers: t.points.iter().map(|p| {
                let (x, y) = p.bbox.center();
                [x, y]
            }).collect(),
        })
        .collect()
}

/// Full spotlight stage for one video.
pub fn spotlight(series: &FrameDetectionSeries, config: &SpotlightConfig) -> Vec<SpotlightSegment> {
    let confident = filter_confident(series, config.confidence_threshold);
    let tracks = associate_tracks(&confident, config.epsilon, config.grace_delta);
    extract_segments(&series.video_id, &tracks, config.min_frames, config.frame_bounds, config.grace_delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthHistogram {
    pub bin_seconds: f64,
    /// `counts[i]` holds segments lasting `[i, i+1) * bin_seconds` seconds.
    pub counts: Vec<usize>,
    pub at_least_8s: usize,
}

pub fn length_histogram(segments: &[SpotlightSegment], fps: f64, bin_seconds: f64) -> LengthHistogram {
    let mut counts = Vec::new();
    let mut at_least_8s = 0;
    for s in segments {
        let seconds = s.frame_count() as f64 / fps;
        let bin = (seconds / bin_seconds).floor() as usize;
        if counts.len() <= bin {
            counts.resize(bin + 1, 0);
        }
        counts[bin] += 1;
        if seconds >= 8.0 {
            at_least_8s += 1;
        }
    }
    LengthHistogram { bin_seconds, counts, at_least_8s }
}

/// One JSON object per line.
pub fn write_segments(path: &Path, segments: &[SpotlightSegment]) -> Result<(), IngestError> {
    let mut out = Vec::new();
    for s in segments {
        serde_json::to_writer(&mut out, s).expect("segment serializes");
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| IngestError::io(path, e))
}

pub fn read_segments(path: &Path) -> Result<Vec<SpotlightSegment>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| IngestError::Malformed { line: i + 1, message: e.to_string() })
        })
        .collect()
}
