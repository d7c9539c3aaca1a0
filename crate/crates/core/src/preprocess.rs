//! Bring heterogeneous raw spectra onto one normalized wavenumber grid:
//! crop to the range every spectrum covers, resample with a natural cubic
//! spline, then min-max normalize each spectrum independently.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// One recorded spectrum: strictly increasing Raman shifts (cm⁻¹) and the
/// intensity at each shift.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    shifts: Vec<f64>,
    intensities: Vec<f64>,
}

impl Spectrum {
    pub fn new(shifts: Vec<f64>, intensities: Vec<f64>) -> Result<Self> {
        if shifts.len() != intensities.len() {
            return Err(Error::InvalidSpectrum(format!(
                "{} shifts but {} intensities",
                shifts.len(),
                intensities.len()
            )));
        }
        if shifts.len() < 2 {
            return Err(Error::InvalidSpectrum("need at least two points".into()));
        }
        if let Some(i) = shifts
            .iter()
            .chain(&intensities)
            .position(|v| !v.is_finite())
        {
            return Err(Error::InvalidSpectrum(format!("non-finite value at position {}", i % shifts.len())));
        }
        if let Some(i) = shifts.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSpectrum(format!(
                "shifts not strictly increasing at index {}: {} then {}",
                i + 1,
                shifts[i],
                shifts[i + 1]
            )));
        }
        Ok(Self {
            shifts,
            intensities,
        })
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn min_shift(&self) -> f64 {
        self.shifts[0]
    }

    pub fn max_shift(&self) -> f64 {
        self.shifts[self.shifts.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    /// Number of samples inside `[lo, hi]`.
    pub fn points_within(&self, lo: f64, hi: f64) -> usize {
        self.shifts.iter().filter(|&&s| s >= lo && s <= hi).count()
    }
}

/// Uniform wavenumber grid `min_shift, …, max_shift` with `num_points` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min_shift: f64,
    pub max_shift: f64,
    pub num_points: usize,
}

impl GridSpec {
    pub fn new(min_shift: f64, max_shift: f64, num_points: usize) -> Result<Self> {
        if !(min_shift < max_shift) || !min_shift.is_finite() || !max_shift.is_finite() {
            return Err(Error::Config(format!(
                "grid range [{min_shift}, {max_shift}] is empty"
            )));
        }
        if num_points < 2 {
            return Err(Error::Config("grid needs at least 2 points".into()));
        }
        Ok(Self {
            min_shift,
            max_shift,
            num_points,
        })
    }

    pub fn points(&self) -> Vec<f64> {
        let last = self.num_points - 1;
        let span = self.max_shift - self.min_shift;
        (0..self.num_points)
            .map(|k| {
                if k == last {
                    self.max_shift
                } else {
                    self.min_shift + span * k as f64 / last as f64
                }
            })
            .collect()
    }
}

/// The shift range covered by every spectrum: `(max of minima, min of maxima)`.
pub fn common_range(spectra: &[Spectrum]) -> Result<(f64, f64)> {
    if spectra.is_empty() {
        return Err(Error::EmptyDataset("no spectra to align".into()));
    }
    let lo = spectra.iter().map(Spectrum::min_shift).fold(f64::NEG_INFINITY, f64::max);
    let hi = spectra.iter().map(Spectrum::max_shift).fold(f64::INFINITY, f64::min);
    if lo < hi {
        return Ok((lo, hi));
    }
    // spectra that end at or before the latest start, or start at or after the earliest end
    let offending = spectra
        .iter()
        .enumerate()
        .filter(|(_, s)| s.max_shift() <= lo || s.min_shift() >= hi)
        .map(|(i, _)| i)
        .collect();
    Err(Error::NoCommonRange { offending })
}

/// Natural cubic spline through a spectrum's samples.
#[derive(Debug, Clone)]
pub struct NaturalSpline<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
    second_derivs: Vec<f64>,
}

impl<'a> NaturalSpline<'a> {
    pub fn fit(spectrum: &'a Spectrum) -> Self {
        let xs = spectrum.shifts();
        let ys = spectrum.intensities();
        let n = xs.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system for the interior second derivatives, solved by
            // forward elimination and back substitution.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                let h0 = xs[i + 1] - xs[i];
                let h1 = xs[i + 2] - xs[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h1 - (ys[i + 1] - ys[i]) / h0);
            }
            for i in 1..k {
                let lower = xs[i + 1] - xs[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Self {
            xs,
            ys,
            second_derivs: m,
        }
    }

    /// Value at `x`, which must lie within the knot range.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        // segment i with xs[i] <= x <= xs[i + 1]
        let i = match self.xs.binary_search_by(|k| k.total_cmp(&x)) {
            Ok(i) => return self.ys[i],
            Err(0) => 0,
            Err(i) if i >= n => n - 2,
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        let m = &self.second_derivs;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
    }
}

/// Evaluate the natural cubic spline of `spectrum` on `grid`. Interpolation
/// only: the grid must lie inside the spectrum's shift range.
pub fn resample_cubic(spectrum: &Spectrum, grid: &GridSpec) -> Result<Vec<f64>> {
    if grid.min_shift < spectrum.min_shift() || grid.max_shift > spectrum.max_shift() {
        return Err(Error::Extrapolation {
            grid_lo: grid.min_shift,
            grid_hi: grid.max_shift,
            lo: spectrum.min_shift(),
            hi: spectrum.max_shift(),
        });
    }
    let spline = NaturalSpline::fit(spectrum);
    Ok(grid.points().into_iter().map(|x| spline.eval(x)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    /// The input was constant; `values` is all zeros.
    pub constant: bool,
}

/// `(x − min) / (max − min)`. A constant input maps to zeros and is flagged.
pub fn minmax_normalize(intensities: &[f64]) -> Result<Normalized> {
    if intensities.is_empty() {
        return Err(Error::EmptyDataset("cannot normalize an empty spectrum".into()));
    }
    let min = intensities.iter().copied().fold(f64::INFINITY, f64::min);
    let max = intensities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return Ok(Normalized {
            values: vec![0.0; intensities.len()],
            constant: true,
        });
    }
    let values = intensities
        .iter()
        .map(|&x| ((x - min) / range).clamp(0.0, 1.0))
        .collect();
    Ok(Normalized {
        values,
        constant: false,
    })
}

/// Result of aligning a set of spectra onto one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSpectra {
    pub grid: GridSpec,
    /// One normalized row per input spectrum.
    pub features: Matrix,
    /// Rows whose resampled intensities were constant.
    pub constant_rows: Vec<usize>,
}

/// Crop to the common range, resample to `num_points` grid points (default:
/// the densest spectrum's sample count inside the common range) and
/// normalize every row.
pub fn align_spectra(spectra: &[Spectrum], num_points: Option<usize>) -> Result<AlignedSpectra> {
    let (lo, hi) = common_range(spectra)?;
    let num_points = num_points.unwrap_or_else(|| {
        spectra
            .iter()
            .map(|s| s.points_within(lo, hi))
            .max()
            .unwrap_or(2)
            .max(2)
    });
    let grid = GridSpec::new(lo, hi, num_points)?;
    let mut data = Vec::with_capacity(spectra.len() * num_points);
    let mut constant_rows = Vec::new();
    for (i, s) in spectra.iter().enumerate() {
        let resampled = resample_cubic(s, &grid)?;
        let normalized = minmax_normalize(&resampled)?;
        if normalized.constant {
            constant_rows.push(i);
        }
        data.extend(normalized.values);
    }
    Ok(AlignedSpectra {
        grid,
        features: Matrix::from_vec(spectra.len(), num_points, data)?,
        constant_rows,
    })
}
