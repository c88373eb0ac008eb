//! Fit of the low-dimensional similarity curve `1 / (1 + a d^(2b))`.

use super::EmbedError;

const SAMPLES: usize = 300;
const MAX_ITER: usize = 200;

/// Target membership: 1 inside `min_dist`, exponential decay beyond.
pub fn target_curve(d: f64, min_dist: f64, spread: f64) -> f64 {
    if d <= min_dist {
        1.0
    } else {
        (-(d - min_dist) / spread).exp()
    }
}

pub fn curve(d: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * d.powf(2.0 * b))
}

/// The sample points `linspace(0, 3 spread, 300)`.
pub fn sample_points(spread: f64) -> Vec<f64> {
    let hi = 3.0 * spread;
    (0..SAMPLES).map(|i| hi * i as f64 / (SAMPLES - 1) as f64).collect()
}

fn sse(xs: &[f64], ys: &[f64], a: f64, b: f64) -> f64 {
    xs.iter().zip(ys).map(|(x, y)| (curve(*x, a, b) - y).powi(2)).sum()
}

/// Root-mean-square residual of `(a, b)` against the target curve.
pub fn residual_rms(min_dist: f64, spread: f64, a: f64, b: f64) -> f64 {
    let xs = sample_points(spread);
    let ys: Vec<f64> = xs.iter().map(|x| target_curve(*x, min_dist, spread)).collect();
    (sse(&xs, &ys, a, b) / xs.len() as f64).sqrt()
}

/// Gauss-Newton least squares with step halving, starting from `a = b = 1`.
pub fn fit_ab(min_dist: f64, spread: f64) -> Result<(f64, f64), EmbedError> {
    if !(spread > 0.0 && spread.is_finite()) || !(0.0..spread * 10.0).contains(&min_dist) {
        return Err(EmbedError::Parameter(format!(
            "need 0 <= min_dist < 10 * spread, got min_dist = {min_dist}, spread = {spread}"
        )));
    }
    let xs = sample_points(spread);
    let ys: Vec<f64> = xs.iter().map(|x| target_curve(*x, min_dist, spread)).collect();
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut cost = sse(&xs, &ys, a, b);
    for _ in 0..MAX_ITER {
        // Normal equations J^T J delta = -J^T r.
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x <= 0.0 {
                continue; // f(0) = 1 for every (a, b): zero gradient
            }
            let p = x.powf(2.0 * b);
            let den = 1.0 + a * p;
            let r = 1.0 / den - y;
            let da = -p / (den * den);
            let db = -a * p * 2.0 * x.ln() / (den * den);
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let det = jaa * jbb - jab * jab;
        if det.abs() < f64::MIN_POSITIVE {
            return Err(EmbedError::Convergence(MAX_ITER));
        }
        let step_a = -(jbb * ga - jab * gb) / det;
        let step_b = -(jaa * gb - jab * ga) / det;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let (na, nb) = (a + t * step_a, b + t * step_b);
            if na > 0.0 && nb > 0.0 {
                let c = sse(&xs, &ys, na, nb);
                if c < cost {
                    accepted = Some((na, nb, c));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((na, nb, c)) = accepted else {
            // No descent direction left at working precision.
            return Ok((a, b));
        };
        let moved = (na - a).abs().max((nb - b).abs());
        let improvement = cost - c;
        a = na;
        b = nb;
        cost = c;
        if moved < 1e-12 || improvement <= 1e-15 * cost.max(1e-300) {
            return Ok((a, b));
        }
    }
    Err(EmbedError::Convergence(MAX_ITER))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Coarse-then-fine grid search over a in [0.5, 3], b in [0.5, 2].
    fn grid_oracle(min_dist: f64) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=250 {
            for j in 0..=150 {
                let (a, b) = (0.5 + 0.01 * i as f64, 0.5 + 0.01 * j as f64);
                let c = residual_rms(min_dist, 1.0, a, b);
                if c < best.0 {
                    best = (c, a, b);
                }
            }
        }
        let (_, ca, cb) = best;
        for i in -20..=20 {
            for j in -20..=20 {
                let (a, b) = (ca + 0.001 * i as f64, cb + 0.001 * j as f64);
                let c = residual_rms(min_dist, 1.0, a, b);
                if c < best.0 {
                    best = (c, a, b);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn matches_grid_search() {
        let (a, b) = fit_ab(0.0, 1.0).unwrap();
        let (ga, gb) = grid_oracle(0.0);
        assert!((a - ga).abs() < 1e-2 && (b - gb).abs() < 1e-2, "fit ({a}, {b}) grid ({ga}, {gb})");
    }

    #[test]
    fn unit_at_zero() {
        let (a, b) = fit_ab(0.1, 1.0).unwrap();
        assert_eq!(curve(0.0, a, b), 1.0);
    }

    #[test]
    fn residual_is_least_squares_optimal() {
        for md in [0.0, 0.1, 0.5] {
            let (a, b) = fit_ab(md, 1.0).unwrap();
            let rms = residual_rms(md, 1.0, a, b);
            let (ga, gb) = grid_oracle(md);
            assert!(rms <= residual_rms(md, 1.0, ga, gb) + 1e-9, "min_dist {md}");
            assert!(rms < 0.025, "min_dist {md}: {rms}");
        }
    }

    /// The 0.02 bound is below the best achievable residual for
    /// min_dist 0 (about 0.0242) and 0.5 (about 0.0207).
    #[test]
    #[ignore = "bound is below the least-squares optimum of the curve family"]
    fn residual_below_two_percent() {
        for md in [0.0, 0.1, 0.5] {
            let (a, b) = fit_ab(md, 1.0).unwrap();
            assert!(residual_rms(md, 1.0, a, b) < 0.02, "min_dist {md}");
        }
    }

    #[test]
    fn rejects_bad_min_dist() {
        assert!(fit_ab(-0.1, 1.0).is_err());
        assert!(fit_ab(10.0, 1.0).is_err());
    }
}
