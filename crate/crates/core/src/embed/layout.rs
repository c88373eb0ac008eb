//! Stochastic layout of a fuzzy graph: edge-sampled attraction and
//! negative-sampled repulsion on the `(a, b)` curve.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fuzzy::FuzzyGraph;
use super::EmbedError;

const GRAD_CLIP: f64 = 4.0;
const REPULSION_EPS: f64 = 0.001;
const SPECTRAL_ITERS: usize = 1000;
const SPECTRAL_TOL: f64 = 1e-7;
const INIT_RANGE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Spectral,
    Random,
}

impl FromStr for Init {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spectral" => Ok(Init::Spectral),
            "random" => Ok(Init::Random),
            other => Err(format!("unknown init {other:?} (spectral | random)")),
        }
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Init::Spectral => "spectral",
            Init::Random => "random",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LayoutParams {
    pub dims: usize,
    pub epochs: usize,
    pub a: f64,
    pub b: f64,
    pub seed: u64,
    pub init: Init,
    pub negative_rate: usize,
    pub learning_rate: f64,
}

impl LayoutParams {
    pub fn new(a: f64, b: f64, seed: u64) -> Self {
        LayoutParams {
            dims: 2,
            epochs: 500,
            a,
            b,
            seed,
            init: Init::Spectral,
            negative_rate: 5,
            learning_rate: 1.0,
        }
    }
}

fn clip(g: f64) -> f64 {
    g.clamp(-GRAD_CLIP, GRAD_CLIP)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn random_init(n: usize, dims: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, dims), || rng.random_range(-INIT_RANGE..INIT_RANGE))
}

fn orthonormalize(vs: &mut [Vec<f64>], against: &[f64]) {
    for i in 0..vs.len() {
        let (done, rest) = vs.split_at_mut(i);
        let v = &mut rest[0];
        for u in done.iter().map(|u| u.as_slice()).chain(std::iter::once(against)) {
            let dot: f64 = v.iter().zip(u).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
    }
}

/// Leading non-trivial eigenvectors of `D^-1/2 W D^-1/2` by block power
/// iteration on the shifted operator, deflated against `D^1/2 1`.
///
/// With `c` components the top eigenvalue 1 has multiplicity `c`, and the
/// component indicators occupy `c - 1` of the output axes, which keeps up to
/// `dims + 1` components apart. `None` for more components than that, or
/// graphs too small to embed.
pub fn spectral_init(graph: &FuzzyGraph, dims: usize, rng: &mut ChaCha8Rng) -> Option<Array2<f64>> {
    let n = graph.n;
    if n <= dims + 1 || graph.components() > dims + 1 {
        return None;
    }
    let degree: Vec<f64> = (0..n).map(|i| graph.neighbors(i).map(|(_, w)| w).sum()).collect();
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut trivial: Vec<f64> = degree.iter().map(|d| d.sqrt()).collect();
    let tn = trivial.iter().map(|x| x * x).sum::<f64>().sqrt();
    trivial.iter_mut().for_each(|x| *x /= tn);

    let mut block: Vec<Vec<f64>> = (0..dims).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    orthonormalize(&mut block, &trivial);
    for _ in 0..SPECTRAL_ITERS {
        let mut next: Vec<Vec<f64>> = block
            .iter()
            .map(|v| {
                (0..n)
                    .map(|i| {
                        let mv: f64 = graph.neighbors(i).map(|(j, w)| w * inv_sqrt[i] * inv_sqrt[j] * v[j]).sum();
                        0.5 * (mv + v[i])
                    })
                    .collect()
            })
            .collect();
        orthonormalize(&mut next, &trivial);
        let change = next
            .iter()
            .zip(&block)
            .map(|(u, v)| {
                let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
                1.0 - dot.abs()
            })
            .fold(0.0f64, f64::max);
        block = next;
        if change < SPECTRAL_TOL {
            break;
        }
    }
    let mut out = Array2::zeros((n, dims));
    for (c, v) in block.iter().enumerate() {
        for (i, x) in v.iter().enumerate() {
            out[[i, c]] = *x;
        }
    }
    if out.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let max = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return None;
    }
    let scale = INIT_RANGE / max;
    out.mapv_inplace(|x| x * scale + rng.random_range(-1e-4..1e-4));
    Some(out)
}

/// Rescales each column into `[0, 10]`.
fn rescale_columns(emb: &mut Array2<f64>) {
    for mut col in emb.columns_mut() {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        if span > 0.0 {
            col.mapv_inplace(|x| INIT_RANGE * (x - lo) / span);
        } else {
            col.mapv_inplace(|_| 0.0);
        }
    }
}

/// Directed edge list with per-edge sampling periods; edges too weak to be
/// sampled once in `epochs` are dropped.
pub(crate) struct EdgeSchedule {
    pub head: Vec<usize>,
    pub tail: Vec<usize>,
    pub period: Vec<f64>,
}

impl EdgeSchedule {
    pub fn new(edges: impl Iterator<Item = (usize, usize, f64)>, epochs: usize) -> Self {
        let all: Vec<(usize, usize, f64)> = edges.collect();
        let max_w = all.iter().map(|e| e.2).fold(0.0f64, f64::max);
        let mut s = EdgeSchedule { head: Vec::new(), tail: Vec::new(), period: Vec::new() };
        for (i, j, w) in all {
            if w <= 0.0 || w < max_w / epochs as f64 {
                continue;
            }
            s.head.push(i);
            s.tail.push(j);
            s.period.push(max_w / w);
        }
        s
    }
}

/// The optimization loop shared by fitting and transforming. Rows of `head`
/// live in `emb`; tails index `emb` when `tail_emb` is `None`, else
/// `tail_emb`, which is never moved.
pub(crate) fn optimize(
    emb: &mut Array2<f64>,
    tail_emb: Option<&Array2<f64>>,
    schedule: &EdgeSchedule,
    params: &LayoutParams,
    initial_alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(), EmbedError> {
    let (a, b) = (params.a, params.b);
    let dims = emb.ncols();
    let n_tail = tail_emb.map_or(emb.nrows(), |t| t.nrows());
    let neg_rate = params.negative_rate as f64;
    let m = schedule.head.len();
    let mut next_sample = schedule.period.clone();
    let neg_period: Vec<f64> = schedule.period.iter().map(|p| p / neg_rate).collect();
    let mut next_negative = neg_period.clone();
    let mut cur = vec![0.0; dims];
    let mut other = vec![0.0; dims];

    for epoch in 0..params.epochs {
        let alpha = initial_alpha * (1.0 - epoch as f64 / params.epochs as f64);
        let e = epoch as f64;
        for idx in 0..m {
            if next_sample[idx] > e {
                continue;
            }
            let j = schedule.head[idx];
            let k = schedule.tail[idx];
            cur.iter_mut().zip(emb.row(j)).for_each(|(c, x)| *c = *x);
            match tail_emb {
                Some(t) => other.iter_mut().zip(t.row(k)).for_each(|(c, x)| *c = *x),
                None => other.iter_mut().zip(emb.row(k)).for_each(|(c, x)| *c = *x),
            }
            let d2 = sq_dist(&cur, &other);
            let coeff = if d2 > 0.0 {
                -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0)
            } else {
                0.0
            };
            for d in 0..dims {
                let g = clip(coeff * (cur[d] - other[d]));
                cur[d] += g * alpha;
                if tail_emb.is_none() {
                    emb[[k, d]] -= g * alpha;
                }
            }
            next_sample[idx] += schedule.period[idx];

            let n_neg = ((e - next_negative[idx]) / neg_period[idx]).floor().max(0.0) as usize;
            for _ in 0..n_neg {
                let r = rng.random_range(0..n_tail);
                match tail_emb {
                    Some(t) => other.iter_mut().zip(t.row(r)).for_each(|(c, x)| *c = *x),
                    None => {
                        if r == j {
                            continue;
                        }
                        other.iter_mut().zip(emb.row(r)).for_each(|(c, x)| *c = *x)
                    }
                }
                let d2 = sq_dist(&cur, &other);
                let coeff = if d2 > 0.0 {
                    2.0 * b / ((REPULSION_EPS + d2) * (a * d2.powf(b) + 1.0))
                } else {
                    0.0
                };
                for d in 0..dims {
                    let g = if coeff > 0.0 { clip(coeff * (cur[d] - other[d])) } else { GRAD_CLIP };
                    cur[d] += g * alpha;
                }
            }
            next_negative[idx] += n_neg as f64 * neg_period[idx];
            emb.row_mut(j).iter_mut().zip(&cur).for_each(|(x, c)| *x = *c);
        }
    }
    if emb.iter().any(|x| !x.is_finite()) {
        return Err(EmbedError::NonFinite("layout coordinates"));
    }
    Ok(())
}

/// Lays out `graph` in `params.dims` dimensions. Deterministic for a seed.
pub fn layout_sgd(graph: &FuzzyGraph, params: &LayoutParams) -> Result<Array2<f64>, EmbedError> {
    if params.dims == 0 || params.epochs == 0 || params.negative_rate == 0 {
        return Err(EmbedError::Parameter("dims, epochs and negative_rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut emb = match params.init {
        Init::Spectral => spectral_init(graph, params.dims, &mut rng),
        Init::Random => None,
    }
    .unwrap_or_else(|| random_init(graph.n, params.dims, &mut rng));
    rescale_columns(&mut emb);

    let both_ways = (0..graph.n).flat_map(|i| graph.neighbors(i).map(move |(j, w)| (i, j, w)));
    let schedule = EdgeSchedule::new(both_ways, params.epochs);
    optimize(&mut emb, None, &schedule, params, params.learning_rate, &mut rng)?;
    Ok(emb)
}
