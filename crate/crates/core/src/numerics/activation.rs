use super::Matrix;
use crate::error::{ensure_shape, Result};

/// Default negative slope for [`leaky_relu`].
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.3;

#[inline]
pub fn leaky_relu_scalar(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu(x: &Matrix, slope: f64) -> Matrix {
    x.map(|v| leaky_relu_scalar(v, slope))
}

/// Backward pass given the pre-activation input. The derivative at exactly 0 is 1.
pub fn leaky_relu_backward(pre_activation: &Matrix, upstream: &Matrix, slope: f64) -> Result<Matrix> {
    ensure_shape("leaky relu rows", pre_activation.rows(), upstream.rows())?;
    ensure_shape("leaky relu columns", pre_activation.cols(), upstream.cols())?;
    let mut out = upstream.clone();
    for (g, &x) in out.as_mut_slice().iter_mut().zip(pre_activation.as_slice()) {
        if x < 0.0 {
            *g *= slope;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_values() {
        assert_eq!(leaky_relu_scalar(2.0, 0.3), 2.0);
        assert_eq!(leaky_relu_scalar(-1.0, 0.3), -0.3);
        assert_eq!(leaky_relu_scalar(0.0, 0.3), 0.0);
    }

    #[test]
    fn gradient_at_zero_takes_positive_branch() {
        let x = Matrix::from_rows(&[&[0.0, -2.0, 3.0]]).unwrap();
        let up = Matrix::from_rows(&[&[1.0, 1.0, 1.0]]).unwrap();
        let g = leaky_relu_backward(&x, &up, 0.3).unwrap();
        assert_eq!(g.row(0), &[1.0, 0.3, 1.0]);
    }
}
