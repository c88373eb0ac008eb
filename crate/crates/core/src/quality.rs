//! Likelihood masking and geometric-mean video selection.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::PoseSeries;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_GEOMEAN_THRESHOLD: f64 = 0.3;
pub const DEFAULT_PARTS: [&str; 5] = ["leftear", "rightear", "snout", "lefthand", "righthand"];

#[derive(Debug, Error, PartialEq)]
pub enum QualityError {
    #[error("unknown bodypart {0:?}")]
    UnknownPart(String),
    #[error("bodypart list is empty")]
    NoParts,
}

/// Samples with likelihood below `tau` become MISSING.
pub fn mask_low_likelihood(pose: &PoseSeries, tau: f64) -> PoseSeries {
    let mut out = pose.clone();
    for sample in out.samples.iter_mut().flatten() {
        if sample.is_some_and(|k| k.likelihood < tau) {
            *sample = None;
        }
    }
    out
}

/// Mean raw likelihood of one bodypart; MISSING samples count as zero.
pub fn bodypart_quality(pose: &PoseSeries, part: &str) -> Result<f64, QualityError> {
    let idx = pose.part_index(part).ok_or_else(|| QualityError::UnknownPart(part.to_string()))?;
    let sum: f64 = pose.column(idx).map(|s| s.map_or(0.0, |k| k.likelihood)).sum();
    Ok(sum / pose.n_frames() as f64)
}

/// `(x_1 * ... * x_n)^(1/n)`, zero when any factor is zero.
pub fn geometric_mean(values: &[f64]) -> f64 {
    if values.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    let n = values.len() as f64;
    let product: f64 = values.iter().product();
    if product.is_normal() {
        product.powf(1.0 / n)
    } else {
        // underflow
        (values.iter().map(|v| v.ln()).sum::<f64>() / n).exp()
    }
}

pub fn geomean_quality<S: AsRef<str>>(pose: &PoseSeries, parts: &[S]) -> Result<f64, QualityError> {
    if parts.is_empty() {
        return Err(QualityError::NoParts);
    }
    let means = parts
        .iter()
        .map(|p| bodypart_quality(pose, p.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(geometric_mean(&means))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub video_id: String,
    pub part_means: Vec<(String, f64)>,
    pub geomean: f64,
    /// Fraction of (frame, part) samples MISSING after masking, pooled over the parts.
    pub missing_fraction: f64,
}

pub fn quality_report<S: AsRef<str>>(pose: &PoseSeries, parts: &[S], tau: f64) -> Result<QualityReport, QualityError> {
    if parts.is_empty() {
        return Err(QualityError::NoParts);
    }
    let mut part_means = Vec::with_capacity(parts.len());
    let mut missing = 0usize;
    for part in parts {
        let part = part.as_ref();
        let idx = pose.part_index(part).ok_or_else(|| QualityError::UnknownPart(part.to_string()))?;
        part_means.push((part.to_string(), bodypart_quality(pose, part)?));
        missing += pose.column(idx).filter(|s| s.is_none_or(|k| k.likelihood < tau)).count();
    }
    let means: Vec<f64> = part_means.iter().map(|(_, m)| *m).collect();
    Ok(QualityReport {
        video_id: pose.video_id.clone(),
        part_means,
        geomean: geometric_mean(&means),
        missing_fraction: missing as f64 / (pose.n_frames() * parts.len()) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTradeoff {
    pub thresholds: Vec<f64>,
    pub kept_fraction: Vec<f64>,
    /// Over kept videos; zero where nothing is kept.
    pub mean_missing_fraction: Vec<f64>,
    pub max_missing_fraction: Vec<f64>,
}

/// Selects videos with `geomean >= threshold` and sweeps the cutoff over
/// `0, 0.05, ..., 1`.
pub fn select_videos(reports: &[QualityReport], threshold: f64) -> (Vec<String>, SelectionTradeoff) {
    let selected = reports.iter().filter(|r| r.geomean >= threshold).map(|r| r.video_id.clone()).collect();
    let mut tradeoff = SelectionTradeoff {
        thresholds: Vec::new(),
        kept_fraction: Vec::new(),
        mean_missing_fraction: Vec::new(),
        max_missing_fraction: Vec::new(),
    };
    for step in 0..=20 {
        let t = step as f64 / 20.0;
        let kept: Vec<f64> = reports.iter().filter(|r| r.geomean >= t).map(|r| r.missing_fraction).collect();
        tradeoff.thresholds.push(t);
        tradeoff.kept_fraction.push(if reports.is_empty() { 0.0 } else { kept.len() as f64 / reports.len() as f64 });
        tradeoff.mean_missing_fraction.push(if kept.is_empty() { 0.0 } else { kept.iter().sum::<f64>() / kept.len() as f64 });
        tradeoff.max_missing_fraction.push(kept.iter().copied().fold(0.0, f64::max));
    }
    (selected, tradeoff)
}

/// `video_id,<part>_mean...,geomean,missing_fraction`
pub fn reports_to_csv(reports: &[QualityReport]) -> String {
    let mut out = String::from("video_id");
    if let Some(first) = reports.first() {
        for (part, _) in &first.part_means {
            write!(out, ",{part}_mean").unwrap();
        }
    }
    out.push_str(",geomean,missing_fraction\n");
    for r in reports {
        out.push_str(&r.video_id);
        for (_, m) in &r.part_means {
            write!(out, ",{m}").unwrap();
        }
        writeln!(out, ",{},{}", r.geomean, r.missing_fraction).unwrap();
    }
    out
}

pub fn tradeoff_to_csv(t: &SelectionTradeoff) -> String {
    let mut out = String::from("threshold,kept_fraction,mean_missing_fraction,max_missing_fraction\n");
    for i in 0..t.thresholds.len() {
        writeln!(
            out,
            "{},{},{},{}",
            t.thresholds[i], t.kept_fraction[i], t.mean_missing_fraction[i], t.max_missing_fraction[i]
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Keypoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose(likelihoods: Vec<Vec<Option<f64>>>) -> PoseSeries {
        let parts = likelihoods[0].len();
        PoseSeries {
            video_id: "v".into(),
            bodyparts: (0..parts).map(|p| format!("p{p}")).collect(),
            frame_indices: (0..likelihoods.len() as u64).collect(),
            samples: likelihoods
                .into_iter()
                .map(|row| row.into_iter().map(|l| l.map(|likelihood| Keypoint { x: 1.0, y: 2.0, likelihood })).collect())
                .collect(),
        }
    }

    fn random_pose(rng: &mut ChaCha8Rng, frames: usize, parts: usize) -> PoseSeries {
        pose((0..frames)
            .map(|_| (0..parts).map(|_| rng.random_bool(0.9).then(|| rng.random::<f64>())).collect())
            .collect())
    }

    #[test]
    fn masking() {
        let p = pose(vec![vec![Some(0.49), Some(0.5)]]);
        let m = mask_low_likelihood(&p, 0.5);
        assert_eq!(m.samples[0][0], None);
        assert!(m.samples[0][1].is_some());
        assert_eq!(mask_low_likelihood(&p, 0.0), p);
        assert_eq!(mask_low_likelihood(&m, 0.5), m, "idempotent");
    }

    #[test]
    fn masked_count_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let p = random_pose(&mut rng, 200, 3);
            let tau = rng.random::<f64>();
            let before = p.samples.iter().flatten().filter(|s| s.is_none()).count();
            let below = p.samples.iter().flatten().filter(|s| s.is_some_and(|k| k.likelihood < tau)).count();
            let after = mask_low_likelihood(&p, tau).samples.iter().flatten().filter(|s| s.is_none()).count();
            assert_eq!(after, before + below);
        }
    }

    #[test]
    fn bodypart_means() {
        let p = pose(vec![vec![Some(1.0), Some(0.2), Some(0.8)], vec![Some(1.0), Some(0.4), None]]);
        assert_eq!(bodypart_quality(&p, "p0").unwrap(), 1.0);
        assert!((bodypart_quality(&p, "p1").unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(bodypart_quality(&p, "p2").unwrap(), 0.4);
        assert_eq!(bodypart_quality(&p, "nose"), Err(QualityError::UnknownPart("nose".into())));
    }

    #[test]
    fn geomean_values() {
        assert_eq!(geometric_mean(&[0.25, 1.0]), 0.5);
        assert!((geometric_mean(&[0.7; 5]) - 0.7).abs() < 1e-15);
        assert_eq!(geometric_mean(&[0.9, 0.0, 0.8]), 0.0);
        let p = pose(vec![vec![Some(0.25), Some(1.0)]]);
        assert_eq!(geomean_quality(&p, &["p0", "p1"]).unwrap(), 0.5);
        assert_eq!(geomean_quality::<&str>(&p, &[]), Err(QualityError::NoParts));
    }

    #[test]
    fn am_gm_and_scale_free_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let n = rng.random_range(1..8);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let g = geometric_mean(&v);
            assert!(g <= v.iter().sum::<f64>() / n as f64 + 1e-12);
            assert!(g <= v.iter().copied().fold(0.0, f64::max) + 1e-12);
        }
        let videos: Vec<Vec<f64>> = (0..50).map(|_| (0..5).map(|_| rng.random_range(0.01..1.0)).collect()).collect();
        let c = 0.37;
        let rank = |vs: &[Vec<f64>]| {
            let mut idx: Vec<usize> = (0..vs.len()).collect();
            idx.sort_by(|&a, &b| geometric_mean(&vs[a]).total_cmp(&geometric_mean(&vs[b])));
            idx
        };
        let scaled: Vec<Vec<f64>> = videos.iter().map(|v| v.iter().map(|x| x * c).collect()).collect();
        assert_eq!(rank(&videos), rank(&scaled));
    }

    fn report(id: &str, geomean: f64, missing: f64) -> QualityReport {
        QualityReport { video_id: id.into(), part_means: vec![], geomean, missing_fraction: missing }
    }

    #[test]
    fn selection_boundary_is_inclusive() {
        let reports = [report("a", 0.29, 0.1), report("b", 0.30, 0.2), report("c", 0.8, 0.0)];
        let (sel, _) = select_videos(&reports, 0.3);
        assert_eq!(sel, ["b", "c"]);
        assert_eq!(select_videos(&reports, 0.0).0.len(), 3);
    }

    #[test]
    fn tradeoff_is_monotone_and_nested() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reports: Vec<_> = (0..200).map(|i| report(&format!("v{i}"), rng.random(), rng.random())).collect();
        let (_, t) = select_videos(&reports, 0.3);
        assert_eq!(t.thresholds.len(), 21);
        assert!(t.kept_fraction.windows(2).all(|w| w[1] <= w[0]));
        let (low, _) = select_videos(&reports, 0.2);
        let (high, _) = select_videos(&reports, 0.6);
        assert!(high.iter().all(|id| low.contains(id)));
    }

    #[test]
    fn report_pools_missing_over_parts() {
        let p = pose(vec![vec![Some(0.9), Some(0.1)], vec![None, Some(0.6)]]);
        let r = quality_report(&p, &["p0", "p1"], 0.5).unwrap();
        assert_eq!(r.missing_fraction, 0.5);
        assert_eq!(r.part_means[0], ("p0".to_string(), 0.45));
        let csv = reports_to_csv(&[r]);
        assert!(csv.starts_with("video_id,p0_mean,p1_mean,geomean,missing_fraction\nv,0.45,"));
    }
}
