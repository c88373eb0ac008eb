//! Clustering and embedding-quality statistics: k-means, purity, DBSCAN,
//! silhouette and trustworthiness.

use std::collections::{BTreeMap, VecDeque};

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rows(points: &Array2<f64>) -> Vec<Vec<f64>> {
    points.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Lloyd's algorithm from k-means++ seeds; the best of `restarts` runs by
/// inertia.
pub fn kmeans(points: &Array2<f64>, k: usize, seed: u64, restarts: usize) -> Vec<usize> {
    let pts = rows(points);
    let n = pts.len();
    assert!(k >= 1 && k <= n, "k-means needs 1 <= k <= n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centers = vec![pts[rng.random_range(0..n)].clone()];
        while centers.len() < k {
            let d: Vec<f64> = pts.iter().map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min)).collect();
            let total: f64 = d.iter().sum();
            let next = if total > 0.0 {
                let mut r = rng.random_range(0.0..total);
                let mut pick = n - 1;
                for (i, di) in d.iter().enumerate() {
                    if r < *di {
                        pick = i;
                        break;
                    }
                    r -= di;
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            centers.push(pts[next].clone());
        }
        let mut labels = vec![0usize; n];
        for _ in 0..300 {
            let mut changed = false;
            for (i, p) in pts.iter().enumerate() {
                let mut arg = 0;
                let mut best_d = f64::INFINITY;
                for (c, center) in centers.iter().enumerate() {
                    let d = dist2(p, center);
                    if d < best_d {
                        best_d = d;
                        arg = c;
                    }
                }
                if labels[i] != arg {
                    labels[i] = arg;
                    changed = true;
                }
            }
            let dim = pts[0].len();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, l) in pts.iter().zip(&labels) {
                counts[*l] += 1;
                sums[*l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = pts.iter().zip(&labels).map(|(p, l)| dist2(p, &centers[*l])).sum();
        if best.as_ref().is_none_or(|b| inertia < b.0) {
            best = Some((inertia, labels));
        }
    }
    best.expect("at least one restart").1
}

/// Fraction of points whose cluster's majority class is their own class.
pub fn purity<T: Ord>(clusters: &[usize], truth: &[T]) -> f64 {
    assert_eq!(clusters.len(), truth.len());
    if clusters.is_empty() {
        return 1.0;
    }
    let mut table: BTreeMap<usize, BTreeMap<&T, usize>> = BTreeMap::new();
    for (c, t) in clusters.iter().zip(truth) {
        *table.entry(*c).or_default().entry(t).or_default() += 1;
    }
    let majority: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    majority as f64 / clusters.len() as f64
}

/// Density-based clusters; `None` marks noise. Neighborhoods include the
/// point itself.
pub fn dbscan(points: &Array2<f64>, eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let pts = rows(points);
    let n = pts.len();
    let eps2 = eps * eps;
    let neighborhood = |i: usize| -> Vec<usize> { (0..n).filter(|&j| dist2(&pts[i], &pts[j]) <= eps2).collect() };
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = neighborhood(i);
        if seeds.len() < min_pts {
            continue;
        }
        let cluster = next;
        next += 1;
        labels[i] = Some(cluster);
        let mut queue: VecDeque<usize> = seeds.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(cluster);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb = neighborhood(j);
            if nb.len() >= min_pts {
                queue.extend(nb);
            }
        }
    }
    labels
}

/// Median distance from each point to its `k`-th nearest other point.
pub fn median_k_distance(points: &Array2<f64>, k: usize) -> f64 {
    let pts = rows(points);
    let n = pts.len();
    if n <= k {
        return 0.0;
    }
    let mut kd: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist2(&pts[i], &pts[j])).collect();
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            d[k - 1].sqrt()
        })
        .collect();
    kd.sort_by(f64::total_cmp);
    kd[n / 2]
}

/// Mean silhouette over labelled points (noise excluded). Fewer than two
/// clusters scores -1.
pub fn silhouette(points: &Array2<f64>, labels: &[Option<usize>]) -> f64 {
    let pts = rows(points);
    let members: Vec<(usize, usize)> = labels.iter().enumerate().filter_map(|(i, l)| l.map(|c| (i, c))).collect();
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, c) in &members {
        *sizes.entry(*c).or_default() += 1;
    }
    if sizes.len() < 2 {
        return -1.0;
    }
    let total: f64 = members
        .iter()
        .map(|&(i, ci)| {
            if sizes[&ci] == 1 {
                return 0.0;
            }
            let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
            for &(j, cj) in &members {
                if j != i {
                    *sums.entry(cj).or_default() += dist2(&pts[i], &pts[j]).sqrt();
                }
            }
            let a = sums.get(&ci).copied().unwrap_or(0.0) / (sizes[&ci] - 1) as f64;
            let b = sums
                .iter()
                .filter(|(c, _)| **c != ci)
                .map(|(c, s)| s / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .sum();
    total / members.len() as f64
}

/// How well low-dimensional `k`-neighborhoods are explained by the
/// high-dimensional ones; 1 is perfect.
pub fn trustworthiness(high: ArrayView2<'_, f32>, low: &Array2<f64>, k: usize) -> f64 {
    let n = high.nrows();
    assert_eq!(n, low.nrows());
    if n < 3 || k == 0 || 2 * n < 3 * k + 2 {
        return 1.0;
    }
    let low_pts = rows(low);
    let mut penalty = 0.0;
    for i in 0..n {
        let mut hd: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d: f64 = high.row(i).iter().zip(high.row(j)).map(|(a, b)| ((*a - *b) as f64).powi(2)).sum();
                (d, j)
            })
            .collect();
        hd.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut rank = vec![0usize; n];
        for (r, (_, j)) in hd.iter().enumerate() {
            rank[*j] = r + 1;
        }
        let mut ld: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist2(&low_pts[i], &low_pts[j]), j)).collect();
        ld.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, j) in &ld[..k] {
            if rank[*j] > k {
                penalty += (rank[*j] - k) as f64;
            }
        }
    }
    let (n, k) = (n as f64, k as f64);
    1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * penalty
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn purity_counts_majorities() {
        assert_eq!(purity(&[0, 0, 1, 1], &["a", "a", "b", "a"]), 0.75);
        assert_eq!(purity(&[0, 0, 0, 0], &[1, 2, 3, 4]), 0.25);
    }

    #[test]
    fn kmeans_splits_two_groups() {
        let pts = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [10.0, 10.0], [10.1, 10.0], [10.0, 10.1]];
        let l = kmeans(&pts, 2, 1, 3);
        assert_eq!(purity(&l, &[0, 0, 0, 1, 1, 1]), 1.0);
        assert_ne!(l[0], l[3]);
    }

    #[test]
    fn dbscan_marks_outliers_as_noise() {
        let pts = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1], [20.0, 20.0]];
        let l = dbscan(&pts, 0.5, 3);
        assert_eq!(l[6], None);
        assert_eq!(l[0], l[1]);
        assert_ne!(l[0], l[3]);
        assert!(l[..6].iter().all(|x| x.is_some()));
    }

    #[test]
    fn silhouette_of_separated_pairs() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]];
        let s = silhouette(&pts, &[Some(0), Some(0), Some(1), Some(1)]);
        // a = 1; b = 10.5 for the outer points and 9.5 for the inner ones.
        let want = ((10.5 - 1.0) / 10.5 + (9.5 - 1.0) / 9.5) / 2.0;
        assert!((s - want).abs() < 1e-12);
        assert_eq!(silhouette(&pts, &[Some(0), Some(0), None, None]), -1.0);
    }

    #[test]
    fn identity_projection_is_trustworthy() {
        let high = array![[0.0f32, 0.0], [1.0, 0.0], [3.0, 0.5], [7.0, 1.0], [7.5, 2.0], [10.0, 4.0]];
        let low = high.mapv(|x| x as f64);
        assert_eq!(trustworthiness(high.view(), &low, 2), 1.0);
        let shuffled = array![[7.0, 1.0], [0.0, 0.0], [10.0, 4.0], [1.0, 0.0], [3.0, 0.5], [7.5, 2.0]];
        assert!(trustworthiness(high.view(), &shuffled, 2) < 1.0);
    }
}
