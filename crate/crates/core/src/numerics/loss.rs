use super::matrix::squared_distance;
use super::Matrix;
use crate::error::{ensure_shape, Error, Result};

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean cross-entropy of `softmax(logits)` against integer labels, and its
/// gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    ensure_shape("cross-entropy labels", logits.rows(), labels.len())?;
    let classes = logits.cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: classes,
        });
    }
    let n = labels.len();
    if n == 0 {
        return Ok((0.0, logits.clone()));
    }
    let mut grad = Matrix::zeros(n, classes);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| libm::exp(v - max)).sum();
        let log_sum = libm::log(sum);
        // −log softmax[label] = log Σ exp(z − max) − (z_label − max)
        loss += log_sum - (row[label] - max);
        let g = grad.row_mut(r);
        for (c, (gv, &z)) in g.iter_mut().zip(row).enumerate() {
            let p = libm::exp(z - max - log_sum);
            *gv = (p - if c == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLossOutput {
    pub loss: f64,
    pub grad_anchor: Matrix,
    pub grad_positive: Matrix,
    pub grad_negative: Matrix,
}

/// Mean over rows of `max(‖a − p‖² − ‖a − n‖² + margin, 0)` with squared
/// Euclidean distances. The subgradient at the hinge is 0.
pub fn triplet_loss(
    anchor: &Matrix,
    positive: &Matrix,
    negative: &Matrix,
    margin: f64,
) -> Result<TripletLossOutput> {
    for m in [positive, negative] {
        ensure_shape("triplet rows", anchor.rows(), m.rows())?;
        ensure_shape("triplet columns", anchor.cols(), m.cols())?;
    }
    if !(margin >= 0.0) {
        return Err(Error::Config("triplet margin must be non-negative".into()));
    }
    let (t, dim) = (anchor.rows(), anchor.cols());
    let mut out = TripletLossOutput {
        loss: 0.0,
        grad_anchor: Matrix::zeros(t, dim),
        grad_positive: Matrix::zeros(t, dim),
        grad_negative: Matrix::zeros(t, dim),
    };
    if t == 0 {
        return Ok(out);
    }
    let scale = 2.0 / t as f64;
    for r in 0..t {
        let (a, p, n) = (anchor.row(r), positive.row(r), negative.row(r));
        let value = squared_distance(a, p) - squared_distance(a, n) + margin;
        if value <= 0.0 {
            continue;
        }
        out.loss += value;
        let ga = out.grad_anchor.row_mut(r);
        for j in 0..dim {
            ga[j] = scale * (n[j] - p[j]);
        }
        let gp = out.grad_positive.row_mut(r);
        for j in 0..dim {
            gp[j] = scale * (p[j] - a[j]);
        }
        let gn = out.grad_negative.row_mut(r);
        for j in 0..dim {
            gn[j] = scale * (a[j] - n[j]);
        }
    }
    out.loss /= t as f64;
    Ok(out)
}
