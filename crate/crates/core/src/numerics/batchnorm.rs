use alloc::vec;
use alloc::vec::Vec;

use super::{Matrix, Mode};
use crate::error::{ensure_shape, Error, Result};

pub const DEFAULT_BN_EPSILON: f64 = 1e-3;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.99;

/// Per-feature batch normalization with learned scale/shift and running statistics.
///
/// Running statistics follow `running = momentum·running + (1 − momentum)·batch`,
/// using the biased batch variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

/// Intermediates of a batchnorm forward pass needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

impl BatchNormCache {
    /// The pre-affine (normalized) activations.
    pub fn normalized(&self) -> &Matrix {
        &self.normalized
    }
}

/// Per-feature mean and biased variance of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStatistics {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchStatistics {
    pub fn of(batch: &Matrix) -> Result<Self> {
        let n = batch.rows();
        if n < 2 {
            return Err(Error::BatchTooSmall { size: n });
        }
        let mean: Vec<f64> = batch.sum_rows().into_iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; batch.cols()];
        for row in batch.iter_rows() {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        Ok(Self { mean, var })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub input: Matrix,
}

impl BatchNormLayer {
    pub fn new(dim: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::Config("batchnorm momentum must be in (0, 1)".into()));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Config("batchnorm epsilon must be positive".into()));
        }
        Ok(Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum,
            epsilon,
        })
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Normalize `batch`. In [`Mode::Train`] batch statistics are used and the
    /// running statistics are updated; otherwise the running statistics are used
    /// and nothing is mutated.
    pub fn forward(&mut self, batch: &Matrix, mode: Mode) -> Result<(Matrix, BatchNormCache)> {
        let (out, cache, stats) = self.normalize(batch, mode)?;
        if let Some(stats) = stats {
            self.update_running(&stats);
        }
        Ok((out, cache))
    }

    /// Non-mutating forward pass. Returns the batch statistics that
    /// [`Mode::Train`] would fold into the running averages.
    pub fn normalize(
        &self,
        batch: &Matrix,
        mode: Mode,
    ) -> Result<(Matrix, BatchNormCache, Option<BatchStatistics>)> {
        let dim = self.dim();
        ensure_shape("batchnorm input columns", dim, batch.cols())?;
        let stats = if mode.uses_batch_statistics() {
            Some(BatchStatistics::of(batch)?)
        } else {
            None
        };
        let (mean, var) = match &stats {
            Some(s) => (&s.mean, &s.var),
            None => (&self.running_mean, &self.running_var),
        };

        let inv_std: Vec<f64> = var
            .iter()
            .map(|&v| 1.0 / libm::sqrt(v + self.epsilon))
            .collect();
        let mut normalized = batch.clone();
        let mut out = Matrix::zeros(batch.rows(), dim);
        for r in 0..batch.rows() {
            let xh = normalized.row_mut(r);
            for j in 0..dim {
                xh[j] = (xh[j] - mean[j]) * inv_std[j];
            }
            let o = out.row_mut(r);
            for j in 0..dim {
                o[j] = self.gamma[j] * xh[j] + self.beta[j];
            }
        }
        let cache = BatchNormCache {
            normalized,
            inv_std,
            batch_stats: stats.is_some(),
        };
        Ok((out, cache, stats))
    }

    pub fn update_running(&mut self, stats: &BatchStatistics) {
        let m = self.momentum;
        for j in 0..self.dim() {
            self.running_mean[j] = m * self.running_mean[j] + (1.0 - m) * stats.mean[j];
            self.running_var[j] = m * self.running_var[j] + (1.0 - m) * stats.var[j];
        }
    }

    pub fn backward(&self, cache: &BatchNormCache, upstream: &Matrix) -> Result<BatchNormGrads> {
        let dim = self.dim();
        let xhat = &cache.normalized;
        ensure_shape("batchnorm upstream columns", dim, upstream.cols())?;
        ensure_shape("batchnorm upstream rows", xhat.rows(), upstream.rows())?;
        let n = upstream.rows() as f64;

        let mut d_gamma = vec![0.0; dim];
        let mut d_beta = vec![0.0; dim];
        for (dy, xh) in upstream.iter_rows().zip(xhat.iter_rows()) {
            for j in 0..dim {
                d_gamma[j] += dy[j] * xh[j];
                d_beta[j] += dy[j];
            }
        }

        let mut input = Matrix::zeros(upstream.rows(), dim);
        for r in 0..upstream.rows() {
            let dy = upstream.row(r);
            let xh = xhat.row(r);
            let dx = input.row_mut(r);
            for j in 0..dim {
                let g = self.gamma[j] * cache.inv_std[j];
                dx[j] = if cache.batch_stats {
                    // d_beta = Σ dy, d_gamma = Σ dy·x̂
                    g * (dy[j] - d_beta[j] / n - xh[j] * d_gamma[j] / n)
                } else {
                    g * dy[j]
                };
            }
        }
        Ok(BatchNormGrads {
            gamma: d_gamma,
            beta: d_beta,
            input,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(dim: usize) -> BatchNormLayer {
        BatchNormLayer::new(dim, DEFAULT_BN_MOMENTUM, DEFAULT_BN_EPSILON).unwrap()
    }

    #[test]
    fn constant_column_normalizes_to_zero() {
        let mut bn = layer(1);
        let batch = Matrix::from_rows(&[[4.0], [4.0], [4.0]]).unwrap();
        let (out, _) = bn.forward(&batch, Mode::Train).unwrap();
        assert!(out.as_slice().iter().all(|v| v.abs() <= 1e-3));
    }

    #[test]
    fn beta_shifts_the_column_mean() {
        let mut bn = layer(2);
        bn.beta = vec![5.0, 5.0];
        let batch = Matrix::from_rows(&[[1.0, -3.0], [2.0, 8.0], [7.0, 0.5], [-4.0, 2.0]]).unwrap();
        let (out, _) = bn.forward(&batch, Mode::Train).unwrap();
        for m in out.sum_rows() {
            assert!((m / 4.0 - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_with_unit_running_stats_is_near_identity() {
        let mut bn = layer(3);
        let batch = Matrix::from_rows(&[[0.5, -2.0, 10.0]]).unwrap();
        let (out, _) = bn.forward(&batch, Mode::Infer).unwrap();
        let scale = 1.0 / libm::sqrt(1.0 + DEFAULT_BN_EPSILON);
        for (o, x) in out.as_slice().iter().zip(batch.as_slice()) {
            assert!((o - x * scale).abs() < 1e-15);
            assert!((o - x).abs() <= x.abs() * 1e-3);
        }
        // running statistics untouched
        assert_eq!(bn, layer(3));
    }

    #[test]
    fn running_stats_move_by_momentum() {
        let mut bn = layer(1);
        let batch = Matrix::from_rows(&[[1.0], [3.0]]).unwrap();
        bn.forward(&batch, Mode::Train).unwrap();
        assert!((bn.running_mean[0] - 0.01 * 2.0).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.99 + 0.01 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn inference_ignores_batch_statistics() {
        let mut bn = layer(1);
        bn.running_mean = vec![1.0];
        bn.running_var = vec![4.0];
        let a = Matrix::from_rows(&[[3.0], [100.0]]).unwrap();
        let b = Matrix::from_rows(&[[3.0], [-50.0]]).unwrap();
        let (oa, _) = bn.forward(&a, Mode::Infer).unwrap();
        let (ob, _) = bn.forward(&b, Mode::FrozenStatistics).unwrap();
        assert_eq!(oa[(0, 0)], ob[(0, 0)]);
    }

    #[test]
    fn single_sample_batch_is_rejected_in_train_mode() {
        let mut bn = layer(2);
        assert_eq!(
            bn.forward(&Matrix::zeros(1, 2), Mode::Train).unwrap_err(),
            Error::BatchTooSmall { size: 1 }
        );
        assert!(bn.forward(&Matrix::zeros(1, 2), Mode::Infer).is_ok());
        assert!(BatchNormLayer::new(2, 1.0, 1e-3).is_err());
        assert!(BatchNormLayer::new(2, 0.9, 0.0).is_err());
    }
}
