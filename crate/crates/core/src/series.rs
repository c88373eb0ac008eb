//! Per-bodypart track cleaning: differential smoothing, gap interpolation and
//! per-frame centroid normalization.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{IngestError, PoseSeries};
use crate::quality::mask_low_likelihood;

pub const DEFAULT_D_MAX: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum SeriesError {
    #[error("track has no observed samples")]
    NoObservations,
    #[error("bodypart {part:?} has {observed} observed samples, at least 2 are required")]
    TooFewObservations { part: String, observed: usize },
    #[error("unknown bodypart {0:?}")]
    UnknownPart(String),
    #[error("bodypart list is empty")]
    NoParts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Positions of one bodypart over a video; `None` is MISSING.
#[derive(Debug, Clone, PartialEq)]
pub struct Track(pub Vec<Option<Point>>);

impl Track {
    pub fn from_pose(pose: &PoseSeries, part: usize) -> Track {
        Track(pose.column(part).map(|s| s.map(|k| Point::new(k.x, k.y))).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn observed(&self) -> usize {
        self.0.iter().filter(|p| p.is_some()).count()
    }

    fn knots(&self) -> (Vec<f64>, Vec<Point>) {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(t, p)| p.map(|p| (t as f64, p)))
            .unzip()
    }
}

/// Marks frame `t` MISSING when it and its raw predecessor are both observed
/// and lie more than `d_max` apart. The comparison always uses the input
/// track, never the partially smoothed output.
pub fn differential_smooth(track: &Track, d_max: f64) -> Track {
    let raw = &track.0;
    let mut out = raw.clone();
    for t in 1..raw.len() {
        if let (Some(prev), Some(cur)) = (raw[t - 1], raw[t]) {
            if prev.distance(&cur) > d_max {
                out[t] = None;
            }
        }
    }
    Track(out)
}

/// Straight-line gap filling, constant beyond the first/last observation.
pub fn interpolate_linear(track: &Track) -> Result<Vec<Point>, SeriesError> {
    let (xs, ps) = track.knots();
    if xs.is_empty() {
        return Err(SeriesError::NoObservations);
    }
    let mut out = Vec::with_capacity(track.len());
    let mut seg = 0;
    for (t, obs) in track.0.iter().enumerate() {
        if let Some(p) = obs {
            out.push(*p);
            continue;
        }
        let t = t as f64;
        if t < xs[0] {
            out.push(ps[0]);
        } else if t > xs[xs.len() - 1] {
            out.push(ps[ps.len() - 1]);
        } else {
            while xs[seg + 1] < t {
                seg += 1;
            }
            let w = (t - xs[seg]) / (xs[seg + 1] - xs[seg]);
            let (a, b) = (ps[seg], ps[seg + 1]);
            out.push(Point::new(a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)));
        }
    }
    Ok(out)
}

/// Natural cubic spline (zero second derivative at both end knots).
#[derive(Debug, Clone)]
pub struct NaturalCubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl NaturalCubicSpline {
    /// `xs` strictly increasing, at least two knots.
    pub fn fit(xs: &[f64], ys: &[f64]) -> NaturalCubicSpline {
        let n = xs.len();
        assert!(n >= 2 && ys.len() == n, "spline needs at least two knots");
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations
            // h[i-1] m[i-1] + 2 (h[i-1] + h[i]) m[i] + h[i] m[i+1] = 6 (d[i] - d[i-1]).
            let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
            let d: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
            let k = n - 2;
            let mut c_prime = vec![0.0; k];
            let mut r_prime = vec![0.0; k];
            for j in 0..k {
                let i = j + 1;
                let diag = 2.0 * (h[i - 1] + h[i]);
                let rhs = 6.0 * (d[i] - d[i - 1]);
                if j == 0 {
                    c_prime[j] = h[i] / diag;
                    r_prime[j] = rhs / diag;
                } else {
                    let denom = diag - h[i - 1] * c_prime[j - 1];
                    c_prime[j] = h[i] / denom;
                    r_prime[j] = (rhs - h[i - 1] * r_prime[j - 1]) / denom;
                }
            }
            m[k] = r_prime[k - 1];
            for j in (0..k - 1).rev() {
                m[j + 1] = r_prime[j] - c_prime[j] * m[j + 2];
            }
        }
        NaturalCubicSpline { xs: xs.to_vec(), ys: ys.to_vec(), m }
    }

    /// Evaluates inside `[x_0, x_{n-1}]`; outside, the nearest end value.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.xs.partition_point(|&k| k <= x) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let a = self.xs[i + 1] - x;
        let b = x - self.xs[i];
        (self.m[i] * a * a * a + self.m[i + 1] * b * b * b) / (6.0 * h)
            + (self.ys[i] / h - self.m[i] * h / 6.0) * a
            + (self.ys[i + 1] / h - self.m[i + 1] * h / 6.0) * b
    }
}

/// Natural cubic spline through the observed samples, per coordinate.
/// A single observation is held constant.
pub fn interpolate_cubic(track: &Track) -> Result<Vec<Point>, SeriesError> {
    let (xs, ps) = track.knots();
    match xs.len() {
        0 => return Err(SeriesError::NoObservations),
        1 => return Ok(vec![ps[0]; track.len()]),
        _ => {}
    }
    let sx = NaturalCubicSpline::fit(&xs, &ps.iter().map(|p| p.x).collect::<Vec<_>>());
    let sy = NaturalCubicSpline::fit(&xs, &ps.iter().map(|p| p.y).collect::<Vec<_>>());
    Ok(track
        .0
        .iter()
        .enumerate()
        .map(|(t, obs)| obs.unwrap_or_else(|| Point::new(sx.eval(t as f64), sy.eval(t as f64))))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementHistogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
    pub total_pairs: usize,
    pub d_max: f64,
    /// Fraction of pairs with displacement `<= d_max`; zero when there are no pairs.
    pub fraction_within: f64,
}

/// Histogram of displacements between consecutive observed frames.
pub fn displacement_histogram<'a>(
    tracks: impl IntoIterator<Item = &'a Track>,
    bin_width: f64,
    d_max: f64,
) -> DisplacementHistogram {
    let mut counts = Vec::new();
    let mut total = 0;
    let mut within = 0;
    for track in tracks {
        for w in track.0.windows(2) {
            if let (Some(a), Some(b)) = (w[0], w[1]) {
                let d = a.distance(&b);
                let bin = (d / bin_width).floor() as usize;
                if counts.len() <= bin {
                    counts.resize(bin + 1, 0);
                }
                counts[bin] += 1;
                total += 1;
                if d <= d_max {
                    within += 1;
                }
            }
        }
    }
    DisplacementHistogram {
        bin_width,
        counts,
        total_pairs: total,
        d_max,
        fraction_within: if total == 0 { 0.0 } else { within as f64 / total as f64 },
    }
}

/// Complete (gap-free) positions for a video.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanSeries {
    pub video_id: String,
    pub bodyparts: Vec<String>,
    /// `frames[t][p]`
    pub frames: Vec<Vec<Point>>,
    pub normalized: bool,
}

impl CleanSeries {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    fn part_indices<S: AsRef<str>>(&self, parts: &[S]) -> Result<Vec<usize>, SeriesError> {
        if parts.is_empty() {
            return Err(SeriesError::NoParts);
        }
        parts
            .iter()
            .map(|p| {
                self.bodyparts
                    .iter()
                    .position(|b| b == p.as_ref())
                    .ok_or_else(|| SeriesError::UnknownPart(p.as_ref().to_string()))
            })
            .collect()
    }
}

/// Subtracts, per frame, the mean position of `parts` from every bodypart.
pub fn centroid_normalize<S: AsRef<str>>(series: &CleanSeries, parts: &[S]) -> Result<CleanSeries, SeriesError> {
    let idx = series.part_indices(parts)?;
    let n = idx.len() as f64;
    let frames = series
        .frames
        .iter()
        .map(|row| {
            let cx = idx.iter().map(|&i| row[i].x).sum::<f64>() / n;
            let cy = idx.iter().map(|&i| row[i].y).sum::<f64>() / n;
            row.iter().map(|p| Point::new(p.x - cx, p.y - cy)).collect()
        })
        .collect();
    Ok(CleanSeries {
        video_id: series.video_id.clone(),
        bodyparts: series.bodyparts.clone(),
        frames,
        normalized: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Linear,
    Cubic,
}

impl std::str::FromStr for Interpolation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(Interpolation::Linear),
            "cubic" => Ok(Interpolation::Cubic),
            other => Err(format!("unknown interpolation {other:?} (expected cubic or linear)")),
        }
    }
}

impl std::fmt::Display for Interpolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Interpolation::Linear => "linear",
            Interpolation::Cubic => "cubic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanConfig {
    pub tau: f64,
    pub d_max: f64,
    pub smooth: bool,
    pub interpolation: Interpolation,
    pub parts: Vec<String>,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            tau: crate::quality::DEFAULT_TAU,
            d_max: DEFAULT_D_MAX,
            smooth: true,
            interpolation: Interpolation::Cubic,
            parts: crate::quality::DEFAULT_PARTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Masked and (optionally) smoothed tracks of the configured parts, before interpolation.
pub fn prepared_tracks(pose: &PoseSeries, config: &CleanConfig) -> Result<Vec<Track>, SeriesError> {
    let masked = mask_low_likelihood(pose, config.tau);
    config
        .parts
        .iter()
        .map(|part| {
            let idx = masked.part_index(part).ok_or_else(|| SeriesError::UnknownPart(part.clone()))?;
            let track = Track::from_pose(&masked, idx);
            Ok(if config.smooth { differential_smooth(&track, config.d_max) } else { track })
        })
        .collect()
}

/// mask -> smooth -> interpolate -> centroid-normalize over the configured parts.
///
/// A video is rejected when any configured part keeps fewer than two observations.
pub fn clean_pose(pose: &PoseSeries, config: &CleanConfig) -> Result<CleanSeries, SeriesError> {
    if config.parts.is_empty() {
        return Err(SeriesError::NoParts);
    }
    let tracks = prepared_tracks(pose, config)?;
    let mut columns = Vec::with_capacity(tracks.len());
    for (part, track) in config.parts.iter().zip(&tracks) {
        let observed = track.observed();
        if observed < 2 {
            return Err(SeriesError::TooFewObservations { part: part.clone(), observed });
        }
        columns.push(match config.interpolation {
            Interpolation::Linear => interpolate_linear(track)?,
            Interpolation::Cubic => interpolate_cubic(track)?,
        });
    }
    let frames = (0..pose.n_frames()).map(|t| columns.iter().map(|c| c[t]).collect()).collect();
    let series = CleanSeries {
        video_id: pose.video_id.clone(),
        bodyparts: config.parts.clone(),
        frames,
        normalized: false,
    };
    centroid_normalize(&series, &config.parts)
}

/// One row per frame with `<part>_x,<part>_y` columns.
pub fn write_clean_csv(path: &Path, series: &CleanSeries) -> Result<(), IngestError> {
    let mut out = String::new();
    let header: Vec<String> = series.bodyparts.iter().flat_map(|p| [format!("{p}_x"), format!("{p}_y")]).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in &series.frames {
        let cells: Vec<String> = row.iter().flat_map(|p| [p.x.to_string(), p.y.to_string()]).collect();
        writeln!(out, "{}", cells.join(",")).unwrap();
    }
    std::fs::write(path, out).map_err(|e| IngestError::io(path, e))
}

/// Reads a clean-series CSV; `normalized` is set when every frame's centroid
/// over all parts is within 1e-9 of the origin.
pub fn read_clean_csv(path: &Path) -> Result<CleanSeries, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(IngestError::NoFrames)?;
    let cols: Vec<&str> = header.split(',').collect();
    if !cols.len().is_multiple_of(2) || cols.is_empty() {
        return Err(IngestError::Header(format!("{} columns is not an x/y pair per bodypart", cols.len())));
    }
    let mut bodyparts = Vec::new();
    for pair in cols.chunks(2) {
        let part = pair[0].strip_suffix("_x");
        if part.is_none() || pair[1].strip_suffix("_y") != part {
            return Err(IngestError::Header(format!("columns {pair:?} are not <part>_x,<part>_y")));
        }
        bodyparts.push(part.unwrap().to_string());
    }
    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(IngestError::Arity { line: i + 2, expected: cols.len(), found: cells.len() });
        }
        let values = cells
            .iter()
            .map(|c| c.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| IngestError::Malformed { line: i + 2, message: "non-numeric cell".into() })?;
        frames.push(values.chunks(2).map(|c| Point::new(c[0], c[1])).collect::<Vec<_>>());
    }
    if frames.is_empty() {
        return Err(IngestError::NoFrames);
    }
    let normalized = frames.iter().all(|row: &Vec<Point>| {
        let n = row.len() as f64;
        let cx = row.iter().map(|p| p.x).sum::<f64>() / n;
        let cy = row.iter().map(|p| p.y).sum::<f64>() / n;
        cx.abs() <= 1e-9 && cy.abs() <= 1e-9
    });
    Ok(CleanSeries { video_id: crate::ingest::file_stem(path), bodyparts, frames, normalized })
}
