use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::Matrix;
use crate::error::{ensure_shape, Error, Result};

/// Fully connected layer `y = x·W + b` with `W` of shape `in_dim × out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients of a [`DenseLayer`] plus the gradient w.r.t. its input.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub input: Matrix,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::Config("dense layer dimensions must be at least 1".into()));
        }
        ensure_shape("dense bias length", weights.cols(), bias.len())?;
        Ok(Self { weights, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / (in_dim + out_dim) as f64);
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in layer.weights.as_mut_slice() {
            *w = rng.gen_range(-limit..limit);
        }
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        ensure_shape("dense input columns", self.in_dim(), batch.cols())?;
        let mut out = batch.matmul(&self.weights)?;
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub fn backward(&self, batch: &Matrix, upstream: &Matrix) -> Result<DenseGrads> {
        ensure_shape("dense input columns", self.in_dim(), batch.cols())?;
        ensure_shape("dense upstream columns", self.out_dim(), upstream.cols())?;
        ensure_shape("dense upstream rows", batch.rows(), upstream.rows())?;
        Ok(DenseGrads {
            weights: batch.t_matmul(upstream)?,
            bias: upstream.sum_rows(),
            input: upstream.matmul_t(&self.weights)?,
        })
    }
}
