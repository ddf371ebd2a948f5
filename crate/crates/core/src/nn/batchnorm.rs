//! Batch normalization over the rows of a batch.
//!
//! Running statistics follow `running = momentum · running + (1 − momentum) · batch`,
//! with the unbiased batch variance feeding the running variance.

use super::matrix::Matrix;
use crate::error::{ensure_finite, Error, Result};

pub const DEFAULT_BN_EPSILON: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNormCache {
    pub x_hat: Matrix,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub mode: Mode,
}

impl BatchNormState {
    pub fn new(width: usize) -> Self {
        Self {
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            epsilon: DEFAULT_BN_EPSILON,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    pub fn with_params(width: usize, epsilon: f64, momentum: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid("batch-norm epsilon must be > 0"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid("batch-norm momentum must be in [0, 1)"));
        }
        Ok(Self {
            epsilon,
            momentum,
            ..Self::new(width)
        })
    }

    pub fn width(&self) -> usize {
        self.running_mean.len()
    }

    /// Normalizes `x` and, in training mode, folds the batch statistics into
    /// the running estimates.
    pub fn forward(&mut self, x: &Matrix, gamma: &[f64], beta: &[f64], mode: Mode) -> Result<Matrix> {
        ensure_finite(x.data())?;
        let (out, cache) = self.normalize(x, gamma, beta, mode)?;
        if mode == Mode::Training {
            self.update_running(&cache, x.rows());
        }
        Ok(out)
    }

    pub(crate) fn normalize(
        &self,
        x: &Matrix,
        gamma: &[f64],
        beta: &[f64],
        mode: Mode,
    ) -> Result<(Matrix, BatchNormCache)> {
        let width = self.width();
        if x.cols() != width || gamma.len() != width || beta.len() != width {
            return Err(Error::shape(format!(
                "batch norm of width {width} got input with {} columns, gamma {}, beta {}",
                x.cols(),
                gamma.len(),
                beta.len()
            )));
        }
        let n = x.rows();
        let (mean, var) = match mode {
            Mode::Training => {
                if n < 2 {
                    return Err(Error::InsufficientData(
                        "batch norm in training mode needs at least 2 rows".into(),
                    ));
                }
                let mean = x.column_means();
                let mut var = vec![0.0; width];
                for row in x.data().chunks_exact(width) {
                    for ((v, &xv), &m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = xv - m;
                        *v += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var)
            }
            Mode::Inference => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let mut x_hat = x.clone();
        let mut out = Matrix::zeros(n, width);
        for r in 0..n {
            let xr = x_hat.row_mut(r);
            for c in 0..width {
                xr[c] = (xr[c] - mean[c]) * inv_std[c];
            }
            let or = out.row_mut(r);
            for c in 0..width {
                or[c] = gamma[c] * xr[c] + beta[c];
            }
        }
        Ok((
            out,
            BatchNormCache {
                x_hat,
                inv_std,
                mean,
                var,
                mode,
            },
        ))
    }

    pub(crate) fn update_running(&mut self, cache: &BatchNormCache, batch: usize) {
        if cache.mode != Mode::Training || batch < 2 {
            return;
        }
        let m = self.momentum;
        let unbias = batch as f64 / (batch - 1) as f64;
        for c in 0..self.width() {
            self.running_mean[c] = m * self.running_mean[c] + (1.0 - m) * cache.mean[c];
            self.running_var[c] = m * self.running_var[c] + (1.0 - m) * cache.var[c] * unbias;
        }
    }
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batch_norm_backward(
    cache: &BatchNormCache,
    gamma: &[f64],
    upstream: &Matrix,
) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (n, width) = upstream.shape();
    let mut dgamma = vec![0.0; width];
    let mut dbeta = vec![0.0; width];
    for r in 0..n {
        let g = upstream.row(r);
        let xh = cache.x_hat.row(r);
        for c in 0..width {
            dbeta[c] += g[c];
            dgamma[c] += g[c] * xh[c];
        }
    }
    let mut dx = Matrix::zeros(n, width);
    match cache.mode {
        Mode::Training => {
            let nf = n as f64;
            for r in 0..n {
                let g = upstream.row(r);
                let xh = cache.x_hat.row(r);
                let dr = dx.row_mut(r);
                for c in 0..width {
                    dr[c] = gamma[c] * cache.inv_std[c] / nf
                        * (nf * g[c] - dbeta[c] - xh[c] * dgamma[c]);
                }
            }
        }
        Mode::Inference => {
            for r in 0..n {
                let g = upstream.row(r);
                let dr = dx.row_mut(r);
                for c in 0..width {
                    dr[c] = g[c] * gamma[c] * cache.inv_std[c];
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_simple_column() {
        let mut st = BatchNormState::new(1);
        let x = Matrix::column_vector(&[1.0, 2.0, 3.0]);
        let y = st.forward(&x, &[1.0], &[0.0], Mode::Training).unwrap();
        // (x - 2) / sqrt(2/3)
        let want = [-1.224_744_871, 0.0, 1.224_744_871];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn constant_column_maps_to_beta() {
        let mut st = BatchNormState::new(1);
        let x = Matrix::column_vector(&[5.0, 5.0, 5.0]);
        let y = st.forward(&x, &[1.0], &[0.0], Mode::Training).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn affine_postscale() {
        let mut st = BatchNormState::new(1);
        let z = [-1.0, 1.0, -1.0, 1.0];
        let x = Matrix::column_vector(&z);
        let y = st.forward(&x, &[2.0], &[1.0], Mode::Training).unwrap();
        for (out, zi) in y.data().iter().zip(z) {
            let expect = 2.0 * zi / (1.0f64 + 1e-5).sqrt() + 1.0;
            assert!((out - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn single_row_training_is_error() {
        let mut st = BatchNormState::new(2);
        let x = Matrix::zeros(1, 2);
        assert!(st.forward(&x, &[1.0; 2], &[0.0; 2], Mode::Training).is_err());
        assert!(st.forward(&x, &[1.0; 2], &[0.0; 2], Mode::Inference).is_ok());
    }

    #[test]
    fn running_stats_use_momentum() {
        let mut st = BatchNormState::new(1);
        let x = Matrix::column_vector(&[1.0, 3.0]);
        st.forward(&x, &[1.0], &[0.0], Mode::Training).unwrap();
        assert!((st.running_mean[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance is 2
        assert!((st.running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn inference_uses_running_stats() {
        let mut st = BatchNormState::new(1);
        st.running_mean = vec![10.0];
        st.running_var = vec![4.0];
        let x = Matrix::column_vector(&[12.0]);
        let y = st.forward(&x, &[1.0], &[0.0], Mode::Inference).unwrap();
        assert!((y.get(0, 0) - 2.0 / (4.0f64 + 1e-5).sqrt()).abs() < 1e-12);
        assert_eq!(st.running_mean, vec![10.0]);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(BatchNormState::with_params(2, 0.0, 0.9).is_err());
        assert!(BatchNormState::with_params(2, 1e-5, 1.0).is_err());
    }
}
