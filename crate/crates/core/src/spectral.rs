//! Uniform periodic grid on the unit torus together with the spectral
//! calculus every other module builds on: differentiation, quadrature,
//! Sobolev norms and 2/3-rule dealiasing.
//!
//! Transform convention: the forward DFT is unnormalized and the inverse
//! carries the `1/N` factor, so a field `f_i = sum_s c_s exp(i k_s x_i) / N`.
//! Spectra are stored in FFT slot order (`0, 1, .., N/2 - 1, -N/2, .., -1`).

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Highest Sobolev order any diagnostic asks for.
pub const S_MAX: usize = 4;

/// Derivative orders above this are rejected.
pub const MAX_DERIVATIVE_ORDER: usize = 2 * S_MAX;

/// The torus is `R / Z`.
pub const DOMAIN_LENGTH: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("grid size {0} must be a power of two and at least 32")]
    InvalidGridSize(usize),
    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite sample {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("derivative order {order} exceeds the cap {cap}")]
    OrderTooHigh { order: usize, cap: usize },
}

struct GridData {
    n: usize,
    dx: f64,
    wavenumbers: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    d2_matrix: OnceLock<DMatrix<f64>>,
}

/// Uniform grid `x_i = i / N` on the unit torus.
///
/// Cloning is cheap; clones share FFT plans and the cached dense
/// second-derivative matrix.
#[derive(Clone)]
pub struct Grid(Arc<GridData>);

impl Grid {
    pub fn new(n_points: usize) -> Result<Self, SpectralError> {
        if n_points < 32 || !n_points.is_power_of_two() {
            return Err(SpectralError::InvalidGridSize(n_points));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_points);
        let inverse = planner.plan_fft_inverse(n_points);
        let wavenumbers = (0..n_points)
            .map(|slot| 2.0 * std::f64::consts::PI * mode_of_slot(slot, n_points) as f64)
            .collect();
        Ok(Self(Arc::new(GridData {
            n: n_points,
            dx: DOMAIN_LENGTH / n_points as f64,
            wavenumbers,
            forward,
            inverse,
            d2_matrix: OnceLock::new(),
        })))
    }

    pub fn n_points(&self) -> usize {
        self.0.n
    }

    pub fn dx(&self) -> f64 {
        self.0.dx
    }

    pub fn domain_length(&self) -> f64 {
        DOMAIN_LENGTH
    }

    /// `k = 2 pi j` in FFT slot order.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.0.wavenumbers
    }

    /// Signed mode number `j` of an FFT slot.
    pub fn mode(&self, slot: usize) -> i64 {
        mode_of_slot(slot, self.0.n)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.0.n).map(|i| i as f64 * self.0.dx).collect()
    }

    /// Samples `f` at the grid nodes.
    ///
    /// # Panics
    /// If `f` produces a non-finite value.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        let values = self.nodes().into_iter().map(f).collect();
        Field::new(self, values).expect("sampled function must be finite")
    }

    pub fn constant(&self, c: f64) -> Field {
        assert!(c.is_finite(), "constant field must be finite");
        Field::from_raw(self, vec![c; self.0.n])
    }

    pub fn zeros(&self) -> Field {
        self.constant(0.0)
    }

    pub(crate) fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.0.forward.process(&mut buf);
        buf
    }

    pub(crate) fn inverse(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        debug_assert_eq!(spectrum.len(), self.0.n);
        self.0.inverse.process(&mut spectrum);
        let scale = 1.0 / self.0.n as f64;
        spectrum.into_iter().map(|c| c.re * scale).collect()
    }

    /// Dense matrix of the spectral second derivative (circulant).
    pub fn second_derivative_matrix(&self) -> &DMatrix<f64> {
        self.0.d2_matrix.get_or_init(|| {
            let n = self.0.n;
            let mut unit = vec![0.0; n];
            unit[0] = 1.0;
            let column = Field::from_raw(self, unit).dxx();
            let c = column.values();
            DMatrix::from_fn(n, n, |i, j| c[(i + n - j) % n])
        })
    }
}

fn mode_of_slot(slot: usize, n: usize) -> i64 {
    if slot < n / 2 {
        slot as i64
    } else {
        slot as i64 - n as i64
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.n == other.0.n
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("n_points", &self.0.n).finish()
    }
}

/// Real samples of a periodic function on a [`Grid`].
#[derive(Clone, Debug)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl Field {
    /// Validates length and finiteness.
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self, SpectralError> {
        if values.len() != grid.n_points() {
            return Err(SpectralError::LengthMismatch {
                expected: grid.n_points(),
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SpectralError::NonFinite { index, value });
        }
        Ok(Self::from_raw(grid, values))
    }

    pub(crate) fn from_raw(grid: &Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_points());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    /// Inverse transform of a spectrum in FFT slot order.
    pub fn from_spectrum(grid: &Grid, spectrum: Vec<Complex64>) -> Self {
        Self::from_raw(grid, grid.inverse(spectrum))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same grid.
    ///
    /// # Panics
    /// If the grids differ.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert!(
            self.grid == other.grid,
            "fields live on different grids ({} vs {} points)",
            self.grid.n_points(),
            other.grid.n_points()
        );
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Field::from_raw(&self.grid, values)
    }

    pub fn exp(&self) -> Field {
        self.map(f64::exp)
    }

    pub fn ln(&self) -> Field {
        self.map(f64::ln)
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        self.grid.forward(&self.values)
    }

    /// Spectral derivative: multiplies each coefficient by `(i k)^order`.
    ///
    /// For odd orders the Nyquist coefficient is dropped so the result stays
    /// real; the mean of any derivative of order >= 1 is exactly zero.
    pub fn derivative(&self, order: usize) -> Result<Field, SpectralError> {
        if order > MAX_DERIVATIVE_ORDER {
            return Err(SpectralError::OrderTooHigh {
                order,
                cap: MAX_DERIVATIVE_ORDER,
            });
        }
        Ok(self.derivative_unchecked(order))
    }

    fn derivative_unchecked(&self, order: usize) -> Field {
        if order == 0 {
            return self.clone();
        }
        let n = self.grid.n_points();
        let mut spec = self.spectrum();
        for (slot, c) in spec.iter_mut().enumerate() {
            let k = self.grid.wavenumbers()[slot];
            if order % 2 == 1 && slot == n / 2 {
                *c = Complex64::new(0.0, 0.0);
            } else {
                *c *= Complex64::new(0.0, k).powu(order as u32);
            }
        }
        spec[0] = Complex64::new(0.0, 0.0);
        Field::from_spectrum(&self.grid, spec)
    }

    /// First derivative.
    pub fn dx(&self) -> Field {
        self.derivative_unchecked(1)
    }

    /// Second derivative.
    pub fn dxx(&self) -> Field {
        self.derivative_unchecked(2)
    }

    /// Exact quadrature of a trigonometric interpolant over the torus.
    pub fn integrate(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64 * DOMAIN_LENGTH
    }

    pub fn l2_norm(&self) -> f64 {
        let mean_sq = self.values.iter().map(|v| v * v).sum::<f64>() / self.len() as f64;
        (mean_sq * DOMAIN_LENGTH).sqrt()
    }

    /// `(sum_{a <= s} ||d^a f||^2)^(1/2)`, evaluated from a single transform
    /// via Parseval.
    ///
    /// # Panics
    /// If `s > S_MAX`.
    pub fn hs_norm(&self, s: usize) -> f64 {
        assert!(s <= S_MAX, "Sobolev order {s} exceeds S_MAX = {S_MAX}");
        let n = self.grid.n_points();
        let spec = self.spectrum();
        let mut total = 0.0;
        for (slot, c) in spec.iter().enumerate() {
            let k2 = self.grid.wavenumbers()[slot].powi(2);
            let power = c.norm_sqr();
            let mut weight = 1.0;
            let mut k2a = 1.0;
            for a in 1..=s {
                k2a *= k2;
                if slot == n / 2 && a % 2 == 1 {
                    continue;
                }
                weight += k2a;
            }
            total += weight * power;
        }
        (total / (n as f64 * n as f64) * DOMAIN_LENGTH).sqrt()
    }

    /// 2/3-rule low-pass: zeroes every mode with `3|j| > N`.
    pub fn dealias(&self) -> Field {
        let n = self.grid.n_points() as i64;
        let mut spec = self.spectrum();
        for (slot, c) in spec.iter_mut().enumerate() {
            if 3 * self.grid.mode(slot).abs() > n {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        Field::from_spectrum(&self.grid, spec)
    }

    /// Pointwise product followed by dealiasing.
    pub fn product(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a * b).dealias()
    }

    /// Trigonometric interpolation onto a grid `factor` times finer.
    pub fn upsample(&self, factor: usize) -> Field {
        assert!(factor.is_power_of_two(), "upsampling factor must be a power of two");
        let n = self.grid.n_points();
        let fine = Grid::new(n * factor).expect("refined grid is a valid power of two");
        let spec = self.spectrum();
        let mut padded = vec![Complex64::new(0.0, 0.0); n * factor];
        let scale = factor as f64;
        for (slot, c) in spec.iter().enumerate() {
            let j = self.grid.mode(slot);
            if slot == n / 2 {
                // Split the Nyquist coefficient between +-N/2.
                let half = c * (0.5 * scale);
                padded[n / 2] += half;
                padded[n * factor - n / 2] += half;
            } else {
                let fine_slot = if j >= 0 { j as usize } else { (n * factor as usize) - (-j) as usize };
                padded[fine_slot] = c * scale;
            }
        }
        Field::from_spectrum(&fine, padded)
    }

    /// `x,value` CSV with 17 significant digits per number.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(48 * self.len() + 8);
        out.push_str("x,value\n");
        for (x, v) in self.grid.nodes().iter().zip(&self.values) {
            out.push_str(&format!("{x:.16e},{v:.16e}\n"));
        }
        out
    }

    /// Parses the `x,value` format back onto `grid`.
    pub fn from_csv(grid: &Grid, text: &str) -> Result<Field, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some("x,value") => {}
            other => return Err(format!("bad header {other:?}")),
        }
        let values = lines
            .enumerate()
            .map(|(row, line)| {
                let (_, v) = line
                    .split_once(',')
                    .ok_or_else(|| format!("row {}: missing comma", row + 1))?;
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("row {}: {e}", row + 1))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Field::new(grid, values).map_err(|e| e.to_string())
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        self.map(|a| a * rhs)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.map(|a| -a)
    }
}
