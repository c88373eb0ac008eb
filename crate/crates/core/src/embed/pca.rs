//! Principal component baseline via the covariance eigendecomposition.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::EmbedError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `dims` rows of unit length, mutually orthogonal.
    pub components: Vec<Vec<f64>>,
    /// Variance fraction of each kept component, descending.
    pub explained: Vec<f64>,
    /// Every covariance eigenvalue, descending.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn dims(&self) -> usize {
        self.components.len()
    }
}

/// Fits the top `dims` components; covariance uses the `N - 1` divisor. Each
/// component is signed so its largest-magnitude entry is positive.
pub fn pca_fit(data: ArrayView2<'_, f32>, dims: usize) -> Result<PcaModel, EmbedError> {
    let (n, d) = data.dim();
    if n < 2 {
        return Err(EmbedError::Parameter(format!("need at least 2 rows, got {n}")));
    }
    if dims == 0 || dims > d {
        return Err(EmbedError::Parameter(format!("dims must be in 1..={d}, got {dims}")));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(EmbedError::NonFinite("pca input"));
    }
    let mean: Vec<f64> = (0..d).map(|j| data.column(j).iter().map(|x| *x as f64).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| data[[i, j]] as f64 - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let components = order[..dims]
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let pivot = v.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let explained = eigenvalues[..dims].iter().map(|l| if total > 0.0 { l / total } else { 0.0 }).collect();
    Ok(PcaModel { mean, components, explained, eigenvalues })
}

pub fn pca_transform(model: &PcaModel, data: ArrayView2<'_, f32>) -> Result<Array2<f64>, EmbedError> {
    if data.ncols() != model.mean.len() {
        return Err(EmbedError::DimensionMismatch { expected: model.mean.len(), got: data.ncols() });
    }
    Ok(Array2::from_shape_fn((data.nrows(), model.dims()), |(i, c)| {
        model.components[c]
            .iter()
            .zip(&model.mean)
            .zip(data.row(i))
            .map(|((w, m), x)| w * (*x as f64 - m))
            .sum()
    }))
}

/// Maps projected coordinates back into input space.
pub fn pca_inverse(model: &PcaModel, coords: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((coords.nrows(), model.mean.len()), |(i, j)| {
        model.mean[j] + (0..model.dims()).map(|c| coords[[i, c]] * model.components[c][j]).sum::<f64>()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_line() {
        let data = array![[0.0f32, 0.0], [1.0, 1.0], [2.0, 2.0], [-3.0, -3.0]];
        let m = pca_fit(data.view(), 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.components[0][0] - h).abs() < 1e-12 && (m.components[0][1] - h).abs() < 1e-12);
        assert!((m.explained[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_maps_to_origin() {
        let data = array![[1.0f32, 2.0, 3.0], [4.0, 0.0, 1.0], [2.0, 2.0, 2.0]];
        let m = pca_fit(data.view(), 2).unwrap();
        let mean = Array2::from_shape_vec((1, 3), m.mean.iter().map(|x| *x as f32).collect()).unwrap();
        let z = pca_transform(&m, mean.view()).unwrap();
        assert!(z.iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn rejects_too_many_dims_or_rows() {
        let data = array![[1.0f32, 2.0], [3.0, 4.0]];
        assert!(pca_fit(data.view(), 3).is_err());
        assert!(pca_fit(data.slice(ndarray::s![..1, ..]), 1).is_err());
    }

    #[test]
    fn reconstruction_error_is_discarded_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..5 {
            let (n, d) = (40 + trial * 7, 6);
            let data = Array2::from_shape_fn((n, d), |(_, j)| rng.random_range(-1.0f32..1.0) * (j + 1) as f32);
            for dims in 1..=d {
                let m = pca_fit(data.view(), dims).unwrap();
                let back = pca_inverse(&m, &pca_transform(&m, data.view()).unwrap());
                let err: f64 = back
                    .iter()
                    .zip(data.iter())
                    .map(|(a, b)| (a - *b as f64).powi(2))
                    .sum::<f64>()
                    / (n - 1) as f64;
                let discarded: f64 = m.eigenvalues[dims..].iter().sum();
                assert!((err - discarded).abs() < 1e-8, "dims {dims}: {err} vs {discarded}");
                for (i, u) in m.components.iter().enumerate() {
                    for (j, v) in m.components.iter().enumerate() {
                        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!((dot - want).abs() < 1e-8);
                    }
                }
                assert!(m.explained.windows(2).all(|w| w[0] >= w[1]));
                assert!(m.explained.iter().sum::<f64>() <= 1.0 + 1e-12);
            }
        }
    }
}
