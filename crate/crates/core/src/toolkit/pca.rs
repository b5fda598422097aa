//! Two-component principal component analysis of latent trajectories.

use nalgebra::{DMatrix, DVector};

use super::{Result, ToolkitError};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// One unit-norm component per row, by decreasing variance.
    pub components: DMatrix<f64>,
    /// Sample covariance eigenvalues, all of them, in decreasing order.
    pub variances: Vec<f64>,
}

impl Pca {
    /// Fits `k` components to the rows of `data` through the SVD of the
    /// centered data.
    pub fn fit(data: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (n, d) = data.shape();
        if n < 2 {
            return Err(ToolkitError::InvalidParams(format!("PCA needs at least 2 samples, got {n}")));
        }
        if k == 0 || k > d {
            return Err(ToolkitError::InvalidParams(format!("cannot extract {k} components from {d} dims")));
        }
        let mean = DVector::from_iterator(d, data.column_iter().map(|c| c.mean()));
        let centered = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[j]);
        let svd = centered.svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mut variances: Vec<f64> = order
            .iter()
            .map(|&i| svd.singular_values[i].powi(2) / (n - 1) as f64)
            .collect();
        variances.resize(d, 0.0);
        let mut components = DMatrix::zeros(k, d);
        for (row, &i) in order.iter().take(k).enumerate() {
            let mut c = v_t.row(i).into_owned();
            // Sign: largest-magnitude entry positive.
            let (imax, _) = c.iter().enumerate().fold((0, 0.0), |acc, (j, v)| {
                if v.abs() > acc.1 {
                    (j, v.abs())
                } else {
                    acc
                }
            });
            if c[imax] < 0.0 {
                c = -c;
            }
            components.set_row(row, &c);
        }
        Ok(Pca { mean, components, variances })
    }

    /// Rows projected onto the components.
    pub fn project(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        let centered = DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| data[(i, j)] - self.mean[j]);
        centered * self.components.transpose()
    }

    /// Mean squared residual of the rank-k reconstruction, scaled like the
    /// sample covariance.
    pub fn reconstruction_error(&self, data: &DMatrix<f64>) -> f64 {
        let n = data.nrows();
        let proj = self.project(data);
        let back = &proj * &self.components;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..data.ncols() {
                total += (data[(i, j)] - self.mean[j] - back[(i, j)]).powi(2);
            }
        }
        total / (n - 1) as f64
    }
}
