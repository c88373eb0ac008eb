//! Flat `key = value` run configuration. Keys mirror the command-line flags;
//! `#` starts a comment.

use std::path::PathBuf;

use serde_json::{json, Value};

use crate::embed::UmapParams;
use crate::quality::{DEFAULT_GEOMEAN_THRESHOLD, DEFAULT_PARTS, DEFAULT_TAU};
use crate::series::{CleanConfig, Interpolation, DEFAULT_D_MAX};
use crate::spotlight::SpotlightConfig;
use crate::windows::{DEFAULT_OMEGA, DEFAULT_STRIDE};

/// `(key, value)` pairs in file order.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Detection JSONL file or directory; spotlight is skipped without it.
    pub detections: Option<PathBuf>,
    pub pose: PathBuf,
    pub out: PathBuf,
    pub spotlight: SpotlightConfig,
    pub geomean_threshold: f64,
    pub clean: CleanConfig,
    pub omega: usize,
    pub stride: usize,
    pub cap: Option<usize>,
    pub umap: UmapParams,
    pub workers: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            detections: None,
            pose: PathBuf::from("pose"),
            out: PathBuf::from("out"),
            spotlight: SpotlightConfig::default(),
            geomean_threshold: DEFAULT_GEOMEAN_THRESHOLD,
            clean: CleanConfig {
                tau: DEFAULT_TAU,
                d_max: DEFAULT_D_MAX,
                smooth: true,
                interpolation: Interpolation::Cubic,
                parts: DEFAULT_PARTS.iter().map(|s| s.to_string()).collect(),
            },
            omega: DEFAULT_OMEGA,
            stride: DEFAULT_STRIDE,
            cap: None,
            umap: UmapParams::default(),
            workers: None,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
}

pub const KEYS: [&str; 24] = [
    "detections",
    "pose",
    "out",
    "confidence",
    "delta",
    "epsilon",
    "min-frames",
    "frame-width",
    "frame-height",
    "geomean-threshold",
    "tau",
    "parts",
    "d-max",
    "smooth",
    "interpolation",
    "omega",
    "stride",
    "cap",
    "neighbors",
    "min-dist",
    "epochs",
    "seed",
    "init",
    "workers",
];

impl PipelineConfig {
    /// Sets one key; unknown keys and unparsable values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "detections" => self.detections = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "pose" => self.pose = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            "confidence" => self.spotlight.confidence_threshold = num(key, value)?,
            "delta" => self.spotlight.grace_delta = num(key, value)?,
            "epsilon" => self.spotlight.epsilon = num(key, value)?,
            "min-frames" => self.spotlight.min_frames = num(key, value)?,
            "frame-width" => self.spotlight.frame_bounds.width = num(key, value)?,
            "frame-height" => self.spotlight.frame_bounds.height = num(key, value)?,
            "geomean-threshold" => self.geomean_threshold = num(key, value)?,
            "tau" => self.clean.tau = num(key, value)?,
            "parts" => self.clean.parts = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            "d-max" => self.clean.d_max = num(key, value)?,
            "smooth" => self.clean.smooth = num(key, value)?,
            "interpolation" => self.clean.interpolation = value.parse()?,
            "omega" => self.omega = num(key, value)?,
            "stride" => self.stride = num(key, value)?,
            "cap" => self.cap = if value.is_empty() || value == "none" { None } else { Some(num(key, value)?) },
            "neighbors" => self.umap.n_neighbors = num(key, value)?,
            "min-dist" => self.umap.min_dist = num(key, value)?,
            "epochs" => self.umap.epochs = num(key, value)?,
            "seed" => self.umap.seed = num(key, value)?,
            "init" => {
                value.parse::<crate::embed::Init>()?;
                self.umap.init = value.to_string();
            }
            "workers" => self.workers = if value.is_empty() || value == "auto" { None } else { Some(num(key, value)?) },
            other => return Err(format!("unknown configuration key {other:?}")),
        }
        Ok(())
    }

    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = &'a (String, String)>) -> Result<(), String> {
        pairs.into_iter().try_for_each(|(k, v)| self.set(k, v))
    }

    /// Domain checks, run before any work starts.
    pub fn validate(&self) -> Result<(), String> {
        self.spotlight.validate()?;
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must be in [0, 1], got {v}"))
            }
        };
        unit("geomean-threshold", self.geomean_threshold)?;
        unit("tau", self.clean.tau)?;
        if !(self.clean.d_max > 0.0 && self.clean.d_max.is_finite()) {
            return Err(format!("d-max must be positive, got {}", self.clean.d_max));
        }
        if self.clean.parts.is_empty() {
            return Err("parts must name at least one bodypart".into());
        }
        if self.omega == 0 || self.stride == 0 {
            return Err("omega and stride must be at least 1".into());
        }
        if self.cap == Some(0) {
            return Err("cap must be at least 1".into());
        }
        if self.umap.n_neighbors == 0 || self.umap.epochs == 0 {
            return Err("neighbors and epochs must be at least 1".into());
        }
        if !(self.umap.min_dist >= 0.0 && self.umap.min_dist < 10.0 * self.umap.spread) {
            return Err(format!("min-dist must be in [0, {}), got {}", 10.0 * self.umap.spread, self.umap.min_dist));
        }
        if self.workers == Some(0) {
            return Err("workers must be at least 1".into());
        }
        Ok(())
    }

    /// Every effective parameter, defaults included.
    pub fn echo(&self) -> Value {
        json!({
            "detections": self.detections.as_ref().map(|p| p.display().to_string()),
            "pose": self.pose.display().to_string(),
            "confidence": self.spotlight.confidence_threshold,
            "delta": self.spotlight.grace_delta,
            "epsilon": self.spotlight.epsilon,
            "min-frames": self.spotlight.min_frames,
            "frame-width": self.spotlight.frame_bounds.width,
            "frame-height": self.spotlight.frame_bounds.height,
            "geomean-threshold": self.geomean_threshold,
            "tau": self.clean.tau,
            "parts": self.clean.parts,
            "d-max": self.clean.d_max,
            "smooth": self.clean.smooth,
            "interpolation": self.clean.interpolation.to_string(),
            "omega": self.omega,
            "stride": self.stride,
            "cap": self.cap,
            "neighbors": self.umap.n_neighbors,
            "min-dist": self.umap.min_dist,
            "spread": self.umap.spread,
            "epochs": self.umap.epochs,
            "seed": self.umap.seed,
            "init": self.umap.init,
            "negative-rate": self.umap.negative_rate,
            "learning-rate": self.umap.learning_rate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let pairs = parse_config("# run\nomega = 30\n\nneighbors=15 # small\n").unwrap();
        assert_eq!(pairs, vec![("omega".into(), "30".into()), ("neighbors".into(), "15".into())]);
        assert!(parse_config("omega 30").is_err());
    }

    #[test]
    fn defaults_are_valid_and_echoed() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let e = c.echo();
        assert_eq!(e["neighbors"], 200);
        assert_eq!(e["min-dist"], 0.0);
        assert_eq!(e["omega"], 60);
        assert_eq!(e["d-max"], 10.0);
        assert_eq!(e["confidence"], 0.75);
        for key in KEYS.iter().filter(|k| !["out", "workers"].contains(k)) {
            assert!(e.get(*key).is_some(), "{key} not echoed");
        }
    }

    #[test]
    fn domain_violations_fail_validation() {
        let mut c = PipelineConfig::default();
        c.set("geomean-threshold", "1.01").unwrap();
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.set("omega", "0").unwrap();
        assert!(c.validate().is_err());
        assert!(PipelineConfig::default().set("bogus", "1").is_err());
        assert!(PipelineConfig::default().set("omega", "ten").is_err());
        assert!(PipelineConfig::default().set("init", "pca").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = PipelineConfig::default();
        for key in KEYS {
            let value = match key {
                "detections" | "pose" | "out" => "x",
                "parts" => "snout,leftear",
                "smooth" => "false",
                "interpolation" => "linear",
                "init" => "random",
                _ => "1",
            };
            c.set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
