use alloc::vec::Vec;
use rand::Rng;

use super::{Matrix, Mode};
use crate::error::{ensure_shape, Error, Result};

/// Inverted dropout: survivors are scaled by `1 / (1 − rate)` at train time so
/// inference is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    rate: f64,
}

/// The per-element multipliers drawn for one application (`0` or `1/(1−rate)`).
/// `None` means the identity was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(alloc::format!(
                "dropout rate {rate} must be in [0, 1)"
            )));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn apply<R: Rng + ?Sized>(&self, batch: &Matrix, mode: Mode, rng: &mut R) -> (Matrix, DropoutMask) {
        if !mode.applies_dropout() || self.rate == 0.0 {
            return (batch.clone(), DropoutMask(None));
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..batch.as_slice().len())
            .map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { scale })
            .collect();
        let mut out = batch.clone();
        for (o, m) in out.as_mut_slice().iter_mut().zip(&mask) {
            *o *= m;
        }
        (out, DropoutMask(Some(mask)))
    }
}

impl DropoutMask {
    pub fn identity() -> Self {
        Self(None)
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_none()
    }

    pub fn backward(&self, upstream: &Matrix) -> Result<Matrix> {
        let mut out = upstream.clone();
        if let Some(mask) = &self.0 {
            ensure_shape("dropout upstream size", mask.len(), upstream.as_slice().len())?;
            for (o, m) in out.as_mut_slice().iter_mut().zip(mask) {
                *o *= m;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn zero_rate_is_identity_in_both_modes() {
        let spec = DropoutSpec::new(0.0).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.5]]).unwrap();
        let mut rng = rng_from_seed(1);
        assert_eq!(spec.apply(&x, Mode::Train, &mut rng).0, x);
        assert_eq!(spec.apply(&x, Mode::Infer, &mut rng).0, x);
    }

    #[test]
    fn inference_is_bitwise_identity() {
        let spec = DropoutSpec::new(0.5).unwrap();
        let x = Matrix::from_rows(&[[0.1, -2.0, 3.5, 1e-300]]).unwrap();
        let (out, mask) = spec.apply(&x, Mode::Infer, &mut rng_from_seed(1));
        assert_eq!(out.as_slice(), x.as_slice());
        assert!(mask.is_identity());
    }

    #[test]
    fn train_mode_preserves_expectation() {
        let spec = DropoutSpec::new(0.5).unwrap();
        let x = Matrix::from_vec(1000, 1000, alloc::vec![1.0; 1_000_000]).unwrap();
        let (out, _) = spec.apply(&x, Mode::Train, &mut rng_from_seed(7));
        let mean = out.as_slice().iter().sum::<f64>() / 1e6;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!(out.as_slice().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn same_seed_same_mask() {
        let spec = DropoutSpec::new(0.3).unwrap();
        let x = Matrix::from_vec(4, 5, alloc::vec![1.0; 20]).unwrap();
        let a = spec.apply(&x, Mode::Train, &mut rng_from_seed(3));
        let b = spec.apply(&x, Mode::Train, &mut rng_from_seed(3));
        assert_eq!(a, b);
    }

    #[test]
    fn rate_of_one_is_rejected() {
        assert!(DropoutSpec::new(1.0).is_err());
        assert!(DropoutSpec::new(-0.1).is_err());
        assert!(DropoutSpec::new(f64::NAN).is_err());
    }
}
