//! Parsers for the three external inputs: detection streams (JSONL), keypoint
//! tables (three-header-row CSV) and grayscale frame sequences.
//!
//! Frame indices are 0-based everywhere.

use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, Luma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frames per second assumed when a detection stream carries no header.
pub const DEFAULT_FPS: f64 = 25.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: frame index {frame} does not follow previous index {previous}")]
    FrameOrder { line: usize, frame: u64, previous: u64 },
    #[error("line {line}: invalid bounding box: {reason}")]
    InvalidBox { line: usize, reason: String },
    #[error("line {line}: expected {expected} cells, found {found}")]
    Arity { line: usize, expected: usize, found: usize },
    #[error("line {line}: likelihood {value} outside [0, 1]")]
    Likelihood { line: usize, value: f64 },
    #[error("bad header: {0}")]
    Header(String),
    #[error("table has no frame rows")]
    NoFrames,
    #[error("missing frame {index} in {dir}")]
    MissingFrame { dir: PathBuf, index: u64 },
    #[error("frame {index} is {found:?}, expected {expected:?}")]
    FrameDimensions { index: u64, expected: (u32, u32), found: (u32, u32) },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl IngestError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IngestError::Io { path: path.into(), source }
    }
}

/// A confidence-scored detection rectangle in frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub confidence: f64,
}

impl BoundingBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64, confidence: f64) -> Result<Self, String> {
        let b = BoundingBox { x0, y0, x1, y1, confidence };
        b.check()?;
        Ok(b)
    }

    // Negated comparisons so NaN coordinates fail.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn check(&self) -> Result<(), String> {
        if !(self.x0 < self.x1) {
            return Err(format!("x0 {} is not below x1 {}", self.x0, self.x1));
        }
        if !(self.y0 < self.y1) {
            return Err(format!("y0 {} is not below y1 {}", self.y0, self.y1));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// The rectangle grown by `delta` pixels on every edge (confidence kept).
    pub fn expanded(&self, delta: f64) -> BoundingBox {
        BoundingBox {
            x0: self.x0 - delta,
            y0: self.y0 - delta,
            x1: self.x1 + delta,
            y1: self.y1 + delta,
            confidence: self.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame: u64,
    pub boxes: Vec<BoundingBox>,
}

/// Per-frame detections for one source video.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetectionSeries {
    pub video_id: String,
    pub fps: f64,
    pub frames: Vec<FrameDetections>,
}

impl FrameDetectionSeries {
    pub fn box_count(&self) -> usize {
        self.frames.iter().map(|f| f.boxes.len()).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct DetectionHeader {
    #[serde(default)]
    video_id: Option<String>,
    #[serde(default)]
    fps: Option<f64>,
}

/// Strict detection parser: the first problem aborts parsing.
pub fn parse_detections(text: &str) -> Result<FrameDetectionSeries, IngestError> {
    let (series, mut errors) = parse_detections_lenient(text);
    if errors.is_empty() {
        Ok(series)
    } else {
        Err(errors.swap_remove(0))
    }
}

/// Parses every well-formed line and reports one error per rejected line.
///
/// Every non-blank line after the optional header ends up either as a frame
/// of the returned series or as an entry of the error list.
pub fn parse_detections_lenient(text: &str) -> (FrameDetectionSeries, Vec<IngestError>) {
    let mut series = FrameDetectionSeries {
        video_id: String::new(),
        fps: DEFAULT_FPS,
        frames: Vec::new(),
    };
    let mut errors = Vec::new();
    let mut seen_record = false;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(raw) {
            Ok(v) => v,
            Err(e) => {
                errors.push(IngestError::Malformed { line, message: e.to_string() });
                seen_record = true;
                continue;
            }
        };
        let is_frame = value.get("frame").is_some();
        if !is_frame && !seen_record {
            seen_record = true;
            match serde_json::from_value::<DetectionHeader>(value) {
                Ok(h) => {
                    if let Some(id) = h.video_id {
                        series.video_id = id;
                    }
                    match h.fps {
                        Some(fps) if fps.is_finite() && fps > 0.0 => series.fps = fps,
                        Some(fps) => errors.push(IngestError::Malformed {
                            line,
                            message: format!("fps {fps} must be positive"),
                        }),
                        None => {}
                    }
                }
                Err(e) => errors.push(IngestError::Malformed { line, message: e.to_string() }),
            }
            continue;
        }
        seen_record = true;
        let record: FrameDetections = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                errors.push(IngestError::Malformed { line, message: e.to_string() });
                continue;
            }
        };
        if let Some(prev) = series.frames.last() {
            if record.frame <= prev.frame {
                errors.push(IngestError::FrameOrder { line, frame: record.frame, previous: prev.frame });
                continue;
            }
        }
        if let Some(reason) = record.boxes.iter().find_map(|b| b.check().err()) {
            errors.push(IngestError::InvalidBox { line, reason });
            continue;
        }
        series.frames.push(record);
    }
    (series, errors)
}

/// Canonical JSONL form: header line, then one line per frame.
pub fn serialize_detections(series: &FrameDetectionSeries) -> String {
    let header = DetectionHeader { video_id: Some(series.video_id.clone()), fps: Some(series.fps) };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for frame in &series.frames {
        out.push_str(&serde_json::to_string(frame).expect("frame serializes"));
        out.push('\n');
    }
    out
}

/// Reads a detection file; a missing `video_id` header falls back to the file stem.
pub fn read_detections(path: &Path) -> Result<FrameDetectionSeries, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let mut series = parse_detections(&text)?;
    if series.video_id.is_empty() {
        series.video_id = file_stem(path);
    }
    Ok(series)
}

pub(crate) fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub likelihood: f64,
}

/// Per-frame keypoint estimates for one spotlight video. `None` is MISSING.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSeries {
    pub video_id: String,
    pub bodyparts: Vec<String>,
    pub frame_indices: Vec<u64>,
    pub samples: Vec<Vec<Option<Keypoint>>>,
}

impl PoseSeries {
    pub fn n_frames(&self) -> usize {
        self.samples.len()
    }

    pub fn part_index(&self, name: &str) -> Option<usize> {
        self.bodyparts.iter().position(|p| p == name)
    }

    /// Column of samples for one bodypart.
    pub fn column(&self, part: usize) -> impl Iterator<Item = Option<Keypoint>> + '_ {
        self.samples.iter().map(move |row| row[part])
    }
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses the keypoint-tool export: `scorer`, `bodyparts` and `coords` header
/// rows followed by one row per frame.
pub fn parse_pose_csv(text: &str, video_id: &str) -> Result<PoseSeries, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = reader.records();

    let mut next_row = |what: &str| -> Result<csv::StringRecord, IngestError> {
        match rows.next() {
            Some(Ok(r)) => Ok(r),
            Some(Err(e)) => Err(IngestError::Malformed {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            }),
            None => Err(IngestError::Header(format!("missing {what} row"))),
        }
    };

    let scorer = next_row("scorer")?;
    let parts_row = next_row("bodyparts")?;
    let coords = next_row("coords")?;
    let width = scorer.len();
    if width < 4 || (width - 1) % 3 != 0 {
        return Err(IngestError::Header(format!("{width} columns is not 1 + 3 per bodypart")));
    }
    for (line, row) in [(2, &parts_row), (3, &coords)] {
        if row.len() != width {
            return Err(IngestError::Arity { line, expected: width, found: row.len() });
        }
    }

    let mut bodyparts = Vec::with_capacity((width - 1) / 3);
    for triplet in 0..(width - 1) / 3 {
        let c = 1 + 3 * triplet;
        let name = &parts_row[c];
        if parts_row[c + 1] != *name || parts_row[c + 2] != *name {
            return Err(IngestError::Header(format!("bodypart {name:?} is not repeated three times")));
        }
        if &coords[c] != "x" || &coords[c + 1] != "y" || &coords[c + 2] != "likelihood" {
            return Err(IngestError::Header(format!("coords for {name:?} are not x,y,likelihood")));
        }
        bodyparts.push(name.to_string());
    }

    let mut frame_indices = Vec::new();
    let mut samples = Vec::new();
    for (i, row) in rows.enumerate() {
        let line = i + 4;
        let row = row.map_err(|e| IngestError::Malformed { line, message: e.to_string() })?;
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        if row.len() != width {
            return Err(IngestError::Arity { line, expected: width, found: row.len() });
        }
        let frame = row[0].trim().parse::<u64>().map_err(|_| IngestError::Malformed {
            line,
            message: format!("frame index {:?} is not an integer", &row[0]),
        })?;
        let mut sample_row = Vec::with_capacity(bodyparts.len());
        for p in 0..bodyparts.len() {
            let c = 1 + 3 * p;
            let x = parse_cell(&row[c]);
            let y = parse_cell(&row[c + 1]);
            let l = parse_cell(&row[c + 2]);
            if let Some(l) = l {
                if !(0.0..=1.0).contains(&l) {
                    return Err(IngestError::Likelihood { line, value: l });
                }
            }
            sample_row.push(match (x, y, l) {
                (Some(x), Some(y), Some(likelihood)) => Some(Keypoint { x, y, likelihood }),
                _ => None,
            });
        }
        frame_indices.push(frame);
        samples.push(sample_row);
    }
    if samples.is_empty() {
        return Err(IngestError::NoFrames);
    }
    Ok(PoseSeries { video_id: video_id.to_string(), bodyparts, frame_indices, samples })
}

pub fn serialize_pose_csv(pose: &PoseSeries) -> String {
    let mut out = String::from("scorer");
    for _ in 0..pose.bodyparts.len() * 3 {
        out.push_str(",mousemap");
    }
    out.push_str("\nbodyparts");
    for part in &pose.bodyparts {
        for _ in 0..3 {
            out.push(',');
            out.push_str(part);
        }
    }
    out.push_str("\ncoords");
    for _ in &pose.bodyparts {
        out.push_str(",x,y,likelihood");
    }
    out.push('\n');
    for (frame, row) in pose.frame_indices.iter().zip(&pose.samples) {
        write!(out, "{frame}").unwrap();
        for sample in row {
            match sample {
                Some(k) => write!(out, ",{},{},{}", k.x, k.y, k.likelihood).unwrap(),
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn read_pose_csv(path: &Path) -> Result<PoseSeries, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    parse_pose_csv(&text, &file_stem(path))
}

/// Grayscale frames of one video, all of identical size.
#[derive(Debug, Clone)]
pub struct FrameStack {
    pub video_id: String,
    pub first_index: u64,
    pub frames: Vec<GrayImage>,
}

/// Converts any decoded image to 8-bit luma with 0.299/0.587/0.114 weights.
pub fn to_luma(img: DynamicImage) -> GrayImage {
    match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            let rgb = other.to_rgb8();
            GrayImage::from_fn(rgb.width(), rgb.height(), |x, y| {
                let [r, g, b] = rgb.get_pixel(x, y).0;
                let v = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
                Luma([v.round().clamp(0.0, 255.0) as u8])
            })
        }
    }
}

/// Path of frame `index` under `dir`, trying `.png` then `.pgm`.
pub fn frame_path(dir: &Path, index: u64) -> Option<PathBuf> {
    ["png", "pgm"]
        .iter()
        .map(|ext| dir.join(format!("{index:06}.{ext}")))
        .find(|p| p.is_file())
}

pub fn load_frame(path: &Path) -> Result<GrayImage, IngestError> {
    let img = image::open(path).map_err(|source| IngestError::Image { path: path.to_path_buf(), source })?;
    Ok(to_luma(img))
}

/// Loads frames `range` (inclusive) from a directory of `%06d.png|pgm` files.
pub fn load_frames(dir: &Path, range: RangeInclusive<u64>) -> Result<FrameStack, IngestError> {
    let mut frames: Vec<GrayImage> = Vec::new();
    for index in range.clone() {
        let path = frame_path(dir, index)
            .ok_or_else(|| IngestError::MissingFrame { dir: dir.to_path_buf(), index })?;
        let frame = load_frame(&path)?;
        if let Some(first) = frames.first() {
            if first.dimensions() != frame.dimensions() {
                return Err(IngestError::FrameDimensions {
                    index,
                    expected: first.dimensions(),
                    found: frame.dimensions(),
                });
            }
        }
        frames.push(frame);
    }
    Ok(FrameStack {
        video_id: dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        first_index: *range.start(),
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_frame_line() {
        let s = parse_detections(
            r#"{"frame":0,"boxes":[{"x0":10,"y0":10,"x1":50,"y1":40,"confidence":0.9}]}"#,
        )
        .unwrap();
        assert_eq!(s.frames.len(), 1);
        assert_eq!(s.frames[0].boxes.len(), 1);
        assert_eq!(s.fps, DEFAULT_FPS);
        assert_eq!(s.frames[0].boxes[0].center(), (30.0, 25.0));
    }

    #[test]
    fn empty_boxes_frame_is_kept() {
        let s = parse_detections("{\"video_id\":\"v\",\"fps\":30}\n{\"frame\":3,\"boxes\":[]}\n").unwrap();
        assert_eq!(s.video_id, "v");
        assert_eq!(s.fps, 30.0);
        assert_eq!(s.frames, vec![FrameDetections { frame: 3, boxes: vec![] }]);
    }

    #[test]
    fn detection_errors_carry_line_numbers() {
        let text = "{\"frame\":0,\"boxes\":[]}\n{\"frame\":0,\"boxes\":[]}\n";
        assert!(matches!(parse_detections(text), Err(IngestError::FrameOrder { line: 2, .. })));

        let text = "{\"frame\":0,\"boxes\":[]}\nnot json\n";
        assert!(matches!(parse_detections(text), Err(IngestError::Malformed { line: 2, .. })));

        let bad = r#"{"frame":0,"boxes":[{"x0":50,"y0":10,"x1":50,"y1":40,"confidence":0.9}]}"#;
        assert!(matches!(parse_detections(bad), Err(IngestError::InvalidBox { line: 1, .. })));

        let bad = r#"{"frame":0,"boxes":[{"x0":0,"y0":10,"x1":50,"y1":40,"confidence":1.5}]}"#;
        assert!(matches!(parse_detections(bad), Err(IngestError::InvalidBox { line: 1, .. })));
    }

    #[test]
    fn lenient_parse_accounts_for_every_record() {
        let text = concat!(
            "{\"video_id\":\"a\"}\n",
            "{\"frame\":0,\"boxes\":[]}\n",
            "garbage\n",
            "{\"frame\":0,\"boxes\":[]}\n",
            "{\"frame\":2,\"boxes\":[]}\n",
            "{\"frame\":3,\"boxes\":[{\"x0\":1,\"y0\":1,\"x1\":0,\"y1\":2,\"confidence\":0.5}]}\n",
        );
        let (series, errors) = parse_detections_lenient(text);
        assert_eq!(series.frames.len() + errors.len(), 5);
        assert_eq!(series.frames.len(), 2);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..1000.0f64, 0.0..1000.0f64, 0.5..300.0f64, 0.5..300.0f64, 0.0..=1.0f64)
            .prop_map(|(x0, y0, w, h, c)| BoundingBox { x0, y0, x1: x0 + w, y1: y0 + h, confidence: c })
    }

    fn arb_series() -> impl Strategy<Value = FrameDetectionSeries> {
        (
            "[a-z0-9_]{1,12}",
            prop_oneof![Just(25.0), 1.0..120.0f64],
            prop::collection::vec((1u64..5, prop::collection::vec(arb_box(), 0..4)), 0..20),
        )
            .prop_map(|(video_id, fps, frames)| {
                let mut index = 0;
                let frames = frames
                    .into_iter()
                    .map(|(gap, boxes)| {
                        index += gap;
                        FrameDetections { frame: index, boxes }
                    })
                    .collect();
                FrameDetectionSeries { video_id, fps, frames }
            })
    }

    fn arb_pose() -> impl Strategy<Value = PoseSeries> {
        (1usize..4, 1usize..12).prop_flat_map(|(parts, frames)| {
            let sample = prop::option::weighted(
                0.8,
                (-500.0..1500.0f64, -500.0..1500.0f64, 0.0..=1.0f64)
                    .prop_map(|(x, y, likelihood)| Keypoint { x, y, likelihood }),
            );
            prop::collection::vec(prop::collection::vec(sample, parts), frames).prop_map(move |samples| {
                PoseSeries {
                    video_id: "vid".into(),
                    bodyparts: (0..parts).map(|p| format!("part{p}")).collect(),
                    frame_indices: (0..samples.len() as u64).collect(),
                    samples,
                }
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn detections_round_trip(series in arb_series()) {
            let text = serialize_detections(&series);
            let parsed = parse_detections(&text).unwrap();
            prop_assert_eq!(&parsed, &series);
            prop_assert_eq!(serialize_detections(&parsed), text);
        }

        #[test]
        fn pose_round_trip(pose in arb_pose()) {
            let parsed = parse_pose_csv(&serialize_pose_csv(&pose), "vid").unwrap();
            prop_assert_eq!(parsed, pose);
        }
    }

    const TABLE: &str = "scorer,s,s,s,s,s,s\n\
        bodyparts,snout,snout,snout,tail,tail,tail\n\
        coords,x,y,likelihood,x,y,likelihood\n\
        0,1.5,2.5,0.9,10,20,0.1\n\
        1,1.0,2.0,,11,21,0.95\n";

    #[test]
    fn pose_table_parses() {
        let pose = parse_pose_csv(TABLE, "v").unwrap();
        assert_eq!(pose.bodyparts, ["snout", "tail"]);
        assert_eq!(pose.n_frames(), 2);
        assert_eq!(pose.samples[0][0], Some(Keypoint { x: 1.5, y: 2.5, likelihood: 0.9 }));
        assert_eq!(pose.samples[1][0], None, "empty likelihood is MISSING");
        assert_eq!(pose.samples[1][1].unwrap().likelihood, 0.95);
    }

    #[test]
    fn non_finite_cells_become_missing() {
        let text = TABLE.replace("1.5,2.5,0.9", "nan,2.5,0.9").replace("11,21", "inf,21");
        let pose = parse_pose_csv(&text, "v").unwrap();
        assert_eq!(pose.samples[0][0], None);
        assert_eq!(pose.samples[1][1], None);
    }

    #[test]
    fn pose_table_errors() {
        let short = TABLE.replace("0,1.5,2.5,0.9,10,20,0.1", "0,1.5,2.5,0.9,10,20");
        assert!(matches!(parse_pose_csv(&short, "v"), Err(IngestError::Arity { line: 4, .. })));
        let bad = TABLE.replace("0.95", "1.2");
        assert!(matches!(parse_pose_csv(&bad, "v"), Err(IngestError::Likelihood { line: 5, .. })));
        let header_only: String = TABLE.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_pose_csv(&header_only, "v"), Err(IngestError::NoFrames)));
    }

    #[test]
    fn red_pixel_luma() {
        let img = image::RgbImage::from_pixel(1, 1, image::Rgb([255, 0, 0]));
        let gray = to_luma(DynamicImage::ImageRgb8(img));
        assert_eq!(gray.get_pixel(0, 0).0[0], 76);
    }

    #[test]
    fn frame_directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3u8 {
            GrayImage::from_pixel(4, 3, Luma([i * 10])).save(dir.path().join(format!("{i:06}.png"))).unwrap();
        }
        let stack = load_frames(dir.path(), 0..=2).unwrap();
        assert_eq!(stack.frames.len(), 3);
        assert_eq!(stack.frames[2].get_pixel(0, 0).0[0], 20);
        let one = load_frames(dir.path(), 1..=1).unwrap();
        assert_eq!(one.frames.len(), 1);
        assert_eq!(one.first_index, 1);

        assert!(matches!(load_frames(dir.path(), 0..=3), Err(IngestError::MissingFrame { index: 3, .. })));
        GrayImage::new(5, 3).save(dir.path().join("000003.pgm")).unwrap();
        assert!(matches!(load_frames(dir.path(), 0..=3), Err(IngestError::FrameDimensions { index: 3, .. })));
    }
}
