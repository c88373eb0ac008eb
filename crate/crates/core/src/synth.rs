//! Synthetic corpora with ground truth, standing in for recorded footage.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage, Luma};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::ingest::{
    serialize_detections, serialize_pose_csv, BoundingBox, FrameDetectionSeries, FrameDetections, IngestError,
    Keypoint, PoseSeries,
};
use crate::quality::DEFAULT_PARTS;
use crate::windows::{write_dataset, WindowDataset, WindowProvenance};

pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Blobs,
    Rings,
    BehaviorModes,
    SpikeTrack,
    CrossingBoxes,
}

impl Profile {
    pub const ALL: [Profile; 5] =
        [Profile::Blobs, Profile::Rings, Profile::BehaviorModes, Profile::SpikeTrack, Profile::CrossingBoxes];
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Profile::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| format!("unknown profile {s:?} (blobs | rings | behavior-modes | spike-track | crossing-boxes)"))
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Blobs => "blobs",
            Profile::Rings => "rings",
            Profile::BehaviorModes => "behavior-modes",
            Profile::SpikeTrack => "spike-track",
            Profile::CrossingBoxes => "crossing-boxes",
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IngestError> {
    let text = serde_json::to_string_pretty(value).expect("truth serializes") + "\n";
    std::fs::write(path, text).map_err(|e| IngestError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), IngestError> {
    std::fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))
}

// ---------------------------------------------------------------------------
// Point clouds

/// Labelled point cloud.
#[derive(Debug, Clone)]
pub struct LabeledPoints {
    pub data: Array2<f32>,
    pub labels: Vec<usize>,
}

impl LabeledPoints {
    /// Wraps the points as a window dataset of one-frame windows so the
    /// embedding stages can read them.
    pub fn to_dataset(&self, name: &str) -> WindowDataset {
        let f = self.data.ncols().div_ceil(2);
        let mut matrix = self.data.clone();
        if self.data.ncols() % 2 == 1 {
            matrix.push_column(ndarray::Array1::zeros(self.data.nrows()).view()).expect("row count agrees");
        }
        WindowDataset {
            matrix,
            index: (0..self.data.nrows()).map(|i| WindowProvenance { video_id: name.to_string(), start_frame: i }).collect(),
            omega: 1,
            stride: 1,
            bodyparts: (0..f).map(|i| format!("d{i}")).collect(),
        }
    }
}

/// `k` isotropic gaussian blobs of `per` points in `dim` dimensions with
/// standard deviation `sigma`; centers are drawn until pairwise at least
/// `min_sep` apart.
pub fn blobs(k: usize, per: usize, dim: usize, sigma: f64, min_sep: f64, seed: u64) -> LabeledPoints {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::new();
    while centers.len() < k {
        let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let far = centers.iter().all(|o| o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= min_sep);
        if far {
            centers.push(c);
        }
    }
    let noise = Normal::new(0.0, sigma).expect("valid sigma");
    let mut data = Array2::zeros((k * per, dim));
    let mut labels = Vec::with_capacity(k * per);
    for (c, center) in centers.iter().enumerate() {
        for i in 0..per {
            for (j, m) in center.iter().enumerate() {
                data[[c * per + i, j]] = (m + noise.sample(&mut rng)) as f32;
            }
            labels.push(c);
        }
    }
    LabeledPoints { data, labels }
}

/// The default 3-blob corpus: 300 points each in 120 dimensions, sigma 0.1,
/// centers at least 10 apart.
pub fn default_blobs(seed: u64) -> LabeledPoints {
    blobs(3, 300, 120, 0.1, 10.0, seed)
}

/// Two concentric rings (radii 1 and 2, `per` points each) lifted to
/// `dim` dimensions by a fixed random linear map plus a sinusoidal warp.
pub fn rings(per: usize, dim: usize, seed: u64) -> LabeledPoints {
    rings_with(per, dim, [1.0, 2.0], 0.05, seed)
}

/// As `rings` with explicit radii and radial jitter.
pub fn rings_with(per: usize, dim: usize, radii: [f64; 2], jitter: f64, seed: u64) -> LabeledPoints {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let lift: Vec<[f64; 2]> = (0..dim).map(|_| [gauss.sample(&mut rng), gauss.sample(&mut rng)]).collect();
    let freq: Vec<[f64; 2]> = (0..dim).map(|_| [gauss.sample(&mut rng), gauss.sample(&mut rng)]).collect();
    let phase: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let jitter = Normal::new(0.0, jitter).expect("valid sigma");
    let mut data = Array2::zeros((2 * per, dim));
    let mut labels = Vec::with_capacity(2 * per);
    for (ring, radius) in radii.into_iter().enumerate() {
        for i in 0..per {
            let theta = std::f64::consts::TAU * (i as f64 + rng.random_range(0.0..1.0)) / per as f64;
            let r = radius + jitter.sample(&mut rng);
            let (x, y) = (r * theta.cos(), r * theta.sin());
            for j in 0..dim {
                let linear = lift[j][0] * x + lift[j][1] * y;
                let warp = 0.25 * (freq[j][0] * x + freq[j][1] * y + phase[j]).sin();
                data[[ring * per + i, j]] = (linear + warp) as f32;
            }
            labels.push(ring);
        }
    }
    LabeledPoints { data, labels }
}

#[derive(Serialize)]
struct PointsTruth<'a> {
    profile: String,
    seed: u64,
    labels: &'a [usize],
}

fn write_points(dir: &Path, name: &str, profile: Profile, seed: u64, pts: &LabeledPoints) -> Result<(), IngestError> {
    create_dir(dir)?;
    write_dataset(&dir.join("windows"), &pts.to_dataset(name))?;
    write_json(&dir.join(TRUTH_FILE), &PointsTruth { profile: profile.to_string(), seed, labels: &pts.labels })
}

// ---------------------------------------------------------------------------
// Spike track

#[derive(Debug, Clone, Serialize)]
pub struct SpikeTruth {
    pub spike_frames: Vec<usize>,
    pub dropout_frames: Vec<usize>,
    pub spike_magnitude: f64,
    pub noise_sigma: f64,
}

/// One bodypart drifting smoothly with gaussian noise, `n_spikes` single-frame
/// jumps of `magnitude` pixels, and low-likelihood dropouts kept clear of the
/// spikes.
pub fn spike_track(n_frames: usize, n_spikes: usize, magnitude: f64, seed: u64) -> (PoseSeries, SpikeTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let spacing = n_frames / (n_spikes + 1);
    let spike_frames: Vec<usize> =
        (1..=n_spikes).map(|i| i * spacing + rng.random_range(0..spacing / 4).min(spacing.saturating_sub(3))).collect();
    let near_spike = |t: usize| spike_frames.iter().any(|&s| t + 2 >= s && t <= s + 2);
    let mut dropout_frames = Vec::new();
    let mut t = 5;
    while t < n_frames {
        t += rng.random_range(20..80);
        let len = rng.random_range(1..4);
        for f in t..(t + len).min(n_frames) {
            if !near_spike(f) {
                dropout_frames.push(f);
            }
        }
        t += len;
    }
    let mut samples = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let s = t as f64;
        let mut x = 400.0 + 120.0 * (s / 300.0).sin() + noise.sample(&mut rng);
        let mut y = 300.0 + 80.0 * (s / 170.0).cos() + noise.sample(&mut rng);
        if spike_frames.contains(&t) {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            x += magnitude * angle.cos();
            y += magnitude * angle.sin();
        }
        let likelihood = if dropout_frames.contains(&t) { rng.random_range(0.01..0.2) } else { rng.random_range(0.9..1.0) };
        samples.push(vec![Some(Keypoint { x, y, likelihood })]);
    }
    let pose = PoseSeries {
        video_id: "spike".into(),
        bodyparts: vec!["snout".into()],
        frame_indices: (0..n_frames as u64).collect(),
        samples,
    };
    (pose, SpikeTruth { spike_frames, dropout_frames, spike_magnitude: magnitude, noise_sigma: 1.0 })
}

pub fn default_spike_track(seed: u64) -> (PoseSeries, SpikeTruth) {
    spike_track(2000, 20, 50.0, seed)
}

// ---------------------------------------------------------------------------
// Crossing boxes

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentTruth {
    pub track_id: usize,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossingTruth {
    pub kept: Vec<SegmentTruth>,
    pub dropped: Vec<SegmentTruth>,
    pub collision_frames: Vec<u64>,
}

fn square(x: f64, y: f64, confidence: f64) -> BoundingBox {
    BoundingBox { x0: x, y0: y, x1: x + 40.0, y1: y + 40.0, confidence }
}

/// Three mice over 113 frames. A and B approach, collide during frames
/// 10-13 and part; B then jumps 60 px at frame 64. C drifts alone but one
/// low-confidence detection at frame 49 splits its track.
pub fn crossing_boxes() -> (FrameDetectionSeries, CrossingTruth) {
    let frames = (0..=112u64)
        .map(|t| {
            let tf = t as f64;
            let ax = 300.0 + tf;
            let gap = match t {
                0..=9 => 200.0 - 5.0 * tf,
                10..=13 => 120.0,
                _ => 160.0,
            };
            let by = if t >= 64 { 260.0 } else { 200.0 };
            let c_conf = if t == 49 { 0.6 } else { 0.95 };
            FrameDetections {
                frame: t,
                boxes: vec![square(ax, 200.0, 0.9), square(ax + gap, by, 0.92), square(900.0 - 0.5 * tf, 550.0, c_conf)],
            }
        })
        .collect();
    let series = FrameDetectionSeries { video_id: "crossing".into(), fps: 25.0, frames };
    let seg = |track_id, start, end| SegmentTruth { track_id, start, end };
    let truth = CrossingTruth {
        kept: vec![seg(3, 14, 112), seg(4, 14, 63), seg(5, 50, 112)],
        dropped: vec![seg(0, 0, 9), seg(1, 0, 9), seg(2, 0, 48), seg(6, 64, 112)],
        collision_frames: (10..=13).collect(),
    };
    (series, truth)
}

// ---------------------------------------------------------------------------
// Behavior modes

#[derive(Debug, Clone)]
pub struct BehaviorConfig {
    pub videos: usize,
    pub frames: usize,
    /// Extra video with uniformly poor likelihoods.
    pub low_quality: bool,
    pub render_frames: bool,
    pub seed: u64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        BehaviorConfig { videos: 4, frames: 1000, low_quality: true, render_frames: false, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSegment {
    pub start: usize,
    pub end: usize,
    pub mode: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BehaviorTruth {
    pub modes: usize,
    /// Per pose-file id, the mode segments covering every frame once.
    pub segments: BTreeMap<String, Vec<ModeSegment>>,
    pub low_quality: Vec<String>,
    pub dropouts: usize,
}

impl BehaviorTruth {
    pub fn mode_at(&self, video: &str, frame: usize) -> Option<usize> {
        self.segments.get(video)?.iter().find(|s| s.start <= frame && frame <= s.end).map(|s| s.mode)
    }

    /// Majority mode over `[start, start + omega)`; ties go to the lower mode.
    pub fn window_mode(&self, video: &str, start: usize, omega: usize) -> Option<usize> {
        let mut counts = vec![0usize; self.modes];
        for f in start..start + omega {
            counts[self.mode_at(video, f)?] += 1;
        }
        (0..self.modes).max_by_key(|&m| (counts[m], std::cmp::Reverse(m)))
    }
}

#[derive(Debug, Clone)]
pub struct BehaviorCorpus {
    pub detections: Vec<FrameDetectionSeries>,
    pub poses: Vec<PoseSeries>,
    pub truth: BehaviorTruth,
}

const MODE_COUNT: usize = 3;
const BLEND_FRAMES: usize = 10;
const FRAME_SCALE: f64 = 8.0;

/// Part offsets from the body centre at phase `t` of mode `m`, in the order
/// leftear, rightear, snout, lefthand, righthand.
fn posture(mode: usize, t: f64) -> [(f64, f64); 5] {
    use std::f64::consts::TAU;
    match mode {
        // Grooming: hands scrub up and down together at the snout.
        0 => {
            let s = (TAU * t / 16.0).sin();
            [(-8.0, -10.0), (8.0, -10.0), (0.0, -4.0 + 2.0 * s), (-5.0, 2.0 + 6.0 * s), (5.0, 2.0 + 6.0 * s)]
        }
        // Walking: stretched body, hands alternate.
        1 => {
            let s = (TAU * t / 30.0).sin();
            [(-6.0, -22.0), (6.0, -22.0), (0.0, -32.0 + s), (-10.0, 5.0 + 8.0 * s), (10.0, 5.0 - 8.0 * s)]
        }
        // Rearing: raised hands, wide ears, slow sideways sway.
        _ => {
            let s = 5.0 * (TAU * t / 48.0).sin();
            [(-15.0 + s, -30.0), (15.0 + s, -30.0), (s, -40.0), (-12.0 + s, -18.0), (12.0 + s, -18.0)]
        }
    }
}

fn mode_segments(n_frames: usize, rng: &mut ChaCha8Rng) -> Vec<ModeSegment> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut mode = rng.random_range(0..MODE_COUNT);
    while start < n_frames {
        let len = rng.random_range(350..=600);
        let end = (start + len - 1).min(n_frames - 1);
        // Fold a short tail into the last segment.
        let end = if n_frames - 1 - end < 120 { n_frames - 1 } else { end };
        out.push(ModeSegment { start, end, mode });
        start = end + 1;
        mode = (mode + rng.random_range(1..MODE_COUNT)) % MODE_COUNT;
    }
    out
}

fn render_frame(centre: (f64, f64), parts: &[(f64, f64)], width: u32, height: u32) -> GrayImage {
    let mut img = GrayImage::from_fn(width, height, |_, y| Luma([if y < 12 { 190 } else { 50 }]));
    let mut disc = |cx: f64, cy: f64, r: f64, v: u8| {
        let (cx, cy) = (cx / FRAME_SCALE, cy / FRAME_SCALE);
        for y in (cy - r).floor().max(0.0) as u32..((cy + r).ceil() as u32 + 1).min(height) {
            for x in (cx - r).floor().max(0.0) as u32..((cx + r).ceil() as u32 + 1).min(width) {
                if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                    img.put_pixel(x, y, Luma([v]));
                }
            }
        }
    };
    disc(centre.0, centre.1, 3.5, 150);
    for p in parts {
        disc(p.0, p.1, 1.5, 235);
    }
    img
}

/// Pose files (`<video>_t0`) and detections for `config.videos` clean videos
/// cycling through three movement modes, plus an optional low-quality video.
pub fn behavior_modes(config: &BehaviorConfig) -> (BehaviorCorpus, Vec<(String, Vec<GrayImage>)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let n = config.frames;
    let total = config.videos + usize::from(config.low_quality);
    let mut corpus = BehaviorCorpus {
        detections: Vec::new(),
        poses: Vec::new(),
        truth: BehaviorTruth { modes: MODE_COUNT, segments: BTreeMap::new(), low_quality: Vec::new(), dropouts: 0 },
    };
    let mut rendered = Vec::new();
    for v in 0..total {
        let video = format!("cage{:02}", v + 1);
        let pose_id = format!("{video}_t0");
        let poor = v >= config.videos;
        let segments = mode_segments(n, &mut rng);
        let mut centre = (rng.random_range(450.0..830.0), rng.random_range(300.0..420.0));
        let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
        let mut samples = Vec::with_capacity(n);
        let mut boxes = Vec::with_capacity(n);
        let mut images = Vec::new();
        let mut dropout_left = [0usize; 5];
        for (si, seg) in segments.iter().enumerate() {
            let prev_mode = if si == 0 { seg.mode } else { segments[si - 1].mode };
            for t in seg.start..=seg.end {
                heading += rng.random_range(-0.15..0.15);
                let step = if seg.mode == 1 { 1.2 } else { 0.3 };
                centre.0 += step * heading.cos();
                centre.1 += step * heading.sin();
                if !(300.0..=980.0).contains(&centre.0) || !(250.0..=470.0).contains(&centre.1) {
                    heading += std::f64::consts::PI;
                    centre.0 = centre.0.clamp(300.0, 980.0);
                    centre.1 = centre.1.clamp(250.0, 470.0);
                }
                let phase = t as f64;
                let now = posture(seg.mode, phase);
                let w = ((t - seg.start) as f64 / BLEND_FRAMES as f64).min(1.0);
                let before = posture(prev_mode, phase);
                let mut row = Vec::with_capacity(5);
                let mut positions = Vec::with_capacity(5);
                for p in 0..5 {
                    let ox = w * now[p].0 + (1.0 - w) * before[p].0;
                    let oy = w * now[p].1 + (1.0 - w) * before[p].1;
                    let (x, y) = (centre.0 + ox + noise.sample(&mut rng), centre.1 + oy + noise.sample(&mut rng));
                    positions.push((centre.0 + ox, centre.1 + oy));
                    if dropout_left[p] == 0 && rng.random_bool(0.01) {
                        dropout_left[p] = rng.random_range(1..=4);
                    }
                    let likelihood = if poor {
                        rng.random_range(0.05..0.45)
                    } else if dropout_left[p] > 0 {
                        dropout_left[p] -= 1;
                        corpus.truth.dropouts += 1;
                        rng.random_range(0.01..0.3)
                    } else {
                        rng.random_range(0.9..1.0)
                    };
                    row.push(Some(Keypoint { x, y, likelihood }));
                }
                samples.push(row);
                let mut frame_boxes = vec![BoundingBox {
                    x0: centre.0 - 40.0,
                    y0: centre.1 - 50.0,
                    x1: centre.0 + 40.0,
                    y1: centre.1 + 30.0,
                    confidence: 0.95,
                }];
                // A brief false detection in a corner of the first video.
                if v == 0 && (200..230).contains(&t) {
                    frame_boxes.push(BoundingBox { x0: 20.0, y0: 20.0, x1: 80.0, y1: 80.0, confidence: 0.9 });
                }
                boxes.push(FrameDetections { frame: t as u64, boxes: frame_boxes });
                if config.render_frames {
                    images.push(render_frame(centre, &positions, 160, 90));
                }
            }
        }
        corpus.poses.push(PoseSeries {
            video_id: pose_id.clone(),
            bodyparts: DEFAULT_PARTS.iter().map(|s| s.to_string()).collect(),
            frame_indices: (0..n as u64).collect(),
            samples,
        });
        corpus.detections.push(FrameDetectionSeries { video_id: video, fps: 25.0, frames: boxes });
        if poor {
            corpus.truth.low_quality.push(pose_id.clone());
        }
        corpus.truth.segments.insert(pose_id.clone(), segments);
        if config.render_frames {
            rendered.push((pose_id, images));
        }
    }
    (corpus, rendered)
}

// ---------------------------------------------------------------------------
// Writers

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub seed: u64,
    pub behavior: BehaviorConfig,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { seed: 7, behavior: BehaviorConfig::default() }
    }
}

/// Writes a profile's corpus under `dir` and returns the files written at
/// the top level.
pub fn write_profile(profile: Profile, dir: &Path, options: &SynthOptions) -> Result<Vec<PathBuf>, IngestError> {
    create_dir(dir)?;
    let seed = options.seed;
    match profile {
        Profile::Blobs => write_points(dir, "blobs", profile, seed, &default_blobs(seed))?,
        Profile::Rings => write_points(dir, "rings", profile, seed, &rings(300, 120, seed))?,
        Profile::SpikeTrack => {
            let (pose, truth) = default_spike_track(seed);
            let pose_dir = dir.join("pose");
            create_dir(&pose_dir)?;
            let path = pose_dir.join("spike.csv");
            std::fs::write(&path, serialize_pose_csv(&pose)).map_err(|e| IngestError::io(&path, e))?;
            write_json(&dir.join(TRUTH_FILE), &truth)?;
        }
        Profile::CrossingBoxes => {
            let (series, truth) = crossing_boxes();
            let det_dir = dir.join("detections");
            create_dir(&det_dir)?;
            let path = det_dir.join("crossing.jsonl");
            std::fs::write(&path, serialize_detections(&series)).map_err(|e| IngestError::io(&path, e))?;
            write_json(&dir.join(TRUTH_FILE), &truth)?;
        }
        Profile::BehaviorModes => {
            let config = BehaviorConfig { seed, ..options.behavior.clone() };
            let (corpus, rendered) = behavior_modes(&config);
            let (det_dir, pose_dir) = (dir.join("detections"), dir.join("pose"));
            create_dir(&det_dir)?;
            create_dir(&pose_dir)?;
            for d in &corpus.detections {
                let path = det_dir.join(format!("{}.jsonl", d.video_id));
                std::fs::write(&path, serialize_detections(d)).map_err(|e| IngestError::io(&path, e))?;
            }
            for p in &corpus.poses {
                let path = pose_dir.join(format!("{}.csv", p.video_id));
                std::fs::write(&path, serialize_pose_csv(p)).map_err(|e| IngestError::io(&path, e))?;
            }
            for (video, images) in &rendered {
                let frame_dir = dir.join("frames").join(video);
                create_dir(&frame_dir)?;
                for (t, img) in images.iter().enumerate() {
                    let path = frame_dir.join(format!("{t:06}.png"));
                    img.save(&path).map_err(|source| IngestError::Image { path: path.clone(), source })?;
                }
            }
            write_json(&dir.join(TRUTH_FILE), &corpus.truth)?;
        }
    }
    let mut written: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| IngestError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    written.sort();
    Ok(written)
}
