//! Functions on `[0, L]`: uniform grids, sampled fields, their modal spectra,
//! spectral differentiation and the norms used throughout the crate.
//!
//! Neumann grids sample at cell midpoints `x_j = (j + 1/2) L / M` and expand in
//! the cosine basis `cos(k pi x / L)`, `k = 0..M`, via a type-II cosine
//! transform. Periodic grids sample at `x_j = j L / M` and expand in the real
//! Fourier basis, stored half-complex:
//!
//! ```text
//! [a_0, a_1, b_1, a_2, b_2, ..., a_{M/2-1}, b_{M/2-1}, a_{M/2}]
//! f(x) = a_0 + sum_k (a_k cos(2 pi k x / L) + b_k sin(2 pi k x / L)) + a_{M/2} cos(pi M x / L)
//! ```
//!
//! In both layouts the coefficient at index `i` is attached to one real basis
//! function with wavenumber `wavenumber(i)`, so the diffusion operator is
//! diagonal in coefficient space.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Smallest admissible grid resolution.
pub const MIN_RESOLUTION: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("domain length must be positive and finite, got {0}")]
    BadLength(f64),
    #[error("resolution must be at least {MIN_RESOLUTION}, got {0}")]
    ResolutionTooSmall(usize),
    #[error("periodic grids need an even resolution, got {0}")]
    OddPeriodicResolution(usize),
    #[error("expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("sample {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("fields live on different grids")]
    GridMismatch,
}

/// Boundary treatment of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Neumann,
    Periodic,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Neumann => f.write_str("neumann"),
            Boundary::Periodic => f.write_str("periodic"),
        }
    }
}

/// Uniform discretization of `[0, L]` with `M` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D<T: Scalar = f64> {
    length: T,
    resolution: usize,
    boundary: Boundary,
}

impl<T: Scalar> Grid1D<T> {
    pub fn new(length: T, resolution: usize, boundary: Boundary) -> Result<Self, FieldError> {
        if !(length.is_finite() && length > T::zero()) {
            return Err(FieldError::BadLength(length.to_f64_lossy()));
        }
        if resolution < MIN_RESOLUTION {
            return Err(FieldError::ResolutionTooSmall(resolution));
        }
        if boundary == Boundary::Periodic && resolution % 2 != 0 {
            return Err(FieldError::OddPeriodicResolution(resolution));
        }
        Ok(Grid1D {
            length,
            resolution,
            boundary,
        })
    }

    pub fn neumann(length: T, resolution: usize) -> Result<Self, FieldError> {
        Self::new(length, resolution, Boundary::Neumann)
    }

    pub fn periodic(length: T, resolution: usize) -> Result<Self, FieldError> {
        Self::new(length, resolution, Boundary::Periodic)
    }

    #[inline]
    pub fn length(&self) -> T {
        self.length
    }

    /// Number of samples (and of modes).
    #[inline]
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    #[inline]
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    #[inline]
    pub fn dx(&self) -> T {
        self.length / T::from_usize_exact(self.resolution)
    }

    /// Sample location of index `j`.
    #[inline]
    pub fn point(&self, j: usize) -> T {
        let j = T::from_usize_exact(j);
        match self.boundary {
            Boundary::Neumann => (j + T::lit(0.5)) * self.dx(),
            Boundary::Periodic => j * self.dx(),
        }
    }

    pub fn points(&self) -> Vec<T> {
        (0..self.resolution).map(|j| self.point(j)).collect()
    }

    /// Same domain and boundary with `factor` times as many cells.
    pub fn refined(&self, factor: usize) -> Self {
        Grid1D {
            length: self.length,
            resolution: self.resolution * factor,
            boundary: self.boundary,
        }
    }

    /// Wavenumber of the basis function stored at coefficient index `i`.
    pub fn wavenumber(&self, i: usize) -> T {
        let m = self.resolution;
        match self.boundary {
            Boundary::Neumann => T::from_usize_exact(i) * T::PI() / self.length,
            Boundary::Periodic => {
                let k = if i == 0 {
                    0
                } else if i == m - 1 {
                    m / 2
                } else {
                    i.div_ceil(2)
                };
                T::lit(2.0) * T::PI() * T::from_usize_exact(k) / self.length
            }
        }
    }

    /// `||basis_i||^2_{L^2}`: the Parseval weight of coefficient `i`.
    pub fn basis_weight(&self, i: usize) -> T {
        let edge = match self.boundary {
            Boundary::Neumann => i == 0,
            Boundary::Periodic => i == 0 || i == self.resolution - 1,
        };
        if edge {
            self.length
        } else {
            self.length * T::lit(0.5)
        }
    }

    /// Value of basis function `i` at `x`.
    pub fn basis_value(&self, i: usize, x: T) -> T {
        let kx = self.wavenumber(i) * x;
        match self.boundary {
            Boundary::Neumann => kx.cos(),
            Boundary::Periodic => {
                if i == 0 || i == self.resolution - 1 || i % 2 == 1 {
                    kx.cos()
                } else {
                    kx.sin()
                }
            }
        }
    }

    /// Index of the grid cell containing `x` (periodic grids wrap around).
    pub fn cell_of(&self, x: T) -> usize {
        let m = self.resolution as i64;
        let s = x / self.dx();
        let j = match self.boundary {
            Boundary::Neumann => s.floor().to_i64().unwrap_or(0).clamp(0, m - 1),
            Boundary::Periodic => s.round().to_i64().unwrap_or(0).rem_euclid(m),
        };
        j as usize
    }
}

/// Cached transforms for one grid. Cloning shares the FFT plans.
#[derive(Clone)]
pub struct SpectralOps<T: Scalar = f64> {
    grid: Grid1D<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    // e^{-i pi k / (2M)}, Neumann only
    twiddle: Vec<Complex<T>>,
}

impl<T: Scalar> fmt::Debug for SpectralOps<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralOps").field("grid", &self.grid).finish()
    }
}

impl<T: Scalar> SpectralOps<T> {
    pub fn new(grid: Grid1D<T>) -> Self {
        let m = grid.resolution();
        let mut planner = FftPlanner::new();
        let len = match grid.boundary() {
            Boundary::Neumann => 2 * m,
            Boundary::Periodic => m,
        };
        let twiddle = match grid.boundary() {
            Boundary::Neumann => {
                let step = -T::PI() / T::from_usize_exact(2 * m);
                (0..m)
                    .map(|k| Complex::from_polar(T::one(), step * T::from_usize_exact(k)))
                    .collect()
            }
            Boundary::Periodic => Vec::new(),
        };
        SpectralOps {
            grid,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            twiddle,
        }
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    /// Samples to modal coefficients.
    pub fn analyze(&self, samples: &[T]) -> Vec<T> {
        let m = self.grid.resolution();
        assert_eq!(samples.len(), m);
        let scale = T::one() / T::from_usize_exact(m);
        match self.grid.boundary() {
            Boundary::Neumann => {
                let mut buf = vec![Complex::new(T::zero(), T::zero()); 2 * m];
                for (b, &s) in buf.iter_mut().zip(samples) {
                    b.re = s;
                }
                self.forward.process(&mut buf);
                (0..m)
                    .map(|k| {
                        let w = if k == 0 { scale } else { T::lit(2.0) * scale };
                        w * (self.twiddle[k] * buf[k]).re
                    })
                    .collect()
            }
            Boundary::Periodic => {
                let mut buf: Vec<Complex<T>> =
                    samples.iter().map(|&s| Complex::new(s, T::zero())).collect();
                self.forward.process(&mut buf);
                let two = T::lit(2.0);
                let mut out = vec![T::zero(); m];
                out[0] = buf[0].re * scale;
                for k in 1..m / 2 {
                    out[2 * k - 1] = two * buf[k].re * scale;
                    out[2 * k] = -two * buf[k].im * scale;
                }
                out[m - 1] = buf[m / 2].re * scale;
                out
            }
        }
    }

    /// Modal coefficients to samples.
    pub fn synthesize(&self, coeffs: &[T]) -> Vec<T> {
        let m = self.grid.resolution();
        assert_eq!(coeffs.len(), m);
        match self.grid.boundary() {
            Boundary::Neumann => {
                let buf = self.neumann_inverse(coeffs);
                buf[..m].iter().map(|c| c.re).collect()
            }
            Boundary::Periodic => {
                let half = T::lit(0.5);
                let mut buf = vec![Complex::new(T::zero(), T::zero()); m];
                buf[0] = Complex::new(coeffs[0], T::zero());
                for k in 1..m / 2 {
                    let c = Complex::new(coeffs[2 * k - 1] * half, -coeffs[2 * k] * half);
                    buf[k] = c;
                    buf[m - k] = c.conj();
                }
                buf[m / 2] = Complex::new(coeffs[m - 1], T::zero());
                self.inverse.process(&mut buf);
                buf.iter().map(|c| c.re).collect()
            }
        }
    }

    // sum_k c_k e^{i pi k (2j+1) / (2M)} for j < 2M
    fn neumann_inverse(&self, coeffs: &[T]) -> Vec<Complex<T>> {
        let m = self.grid.resolution();
        let mut buf = vec![Complex::new(T::zero(), T::zero()); 2 * m];
        for k in 0..m {
            buf[k] = self.twiddle[k].conj() * coeffs[k];
        }
        self.inverse.process(&mut buf);
        buf
    }

    /// Samples of the spatial derivative of the field with the given coefficients.
    pub fn derivative_samples(&self, coeffs: &[T]) -> Vec<T> {
        let m = self.grid.resolution();
        match self.grid.boundary() {
            Boundary::Neumann => {
                // d/dx cos(kx) = -k sin(kx): evaluate a sine series
                let d: Vec<T> = (0..m)
                    .map(|k| -coeffs[k] * self.grid.wavenumber(k))
                    .collect();
                let buf = self.neumann_inverse(&d);
                buf[..m].iter().map(|c| c.im).collect()
            }
            Boundary::Periodic => self.synthesize(&self.periodic_derivative_coeffs(coeffs)),
        }
    }

    fn periodic_derivative_coeffs(&self, coeffs: &[T]) -> Vec<T> {
        let m = self.grid.resolution();
        let mut d = vec![T::zero(); m];
        for k in 1..m / 2 {
            let kappa = self.grid.wavenumber(2 * k);
            d[2 * k - 1] = coeffs[2 * k] * kappa;
            d[2 * k] = -coeffs[2 * k - 1] * kappa;
        }
        d
    }

    /// `sum_i w_i c_i^2`, the squared L^2 norm of the represented function.
    pub fn l2_sq(&self, coeffs: &[T]) -> T {
        coeffs
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, &c)| acc + self.grid.basis_weight(i) * c * c)
    }

    /// `||f_x||^2_{L^2}` from coefficients.
    pub fn dx_l2_sq(&self, coeffs: &[T]) -> T {
        let m = self.grid.resolution();
        coeffs
            .iter()
            .enumerate()
            .filter(|&(i, _)| !(self.grid.boundary() == Boundary::Periodic && i == m - 1))
            .fold(T::zero(), |acc, (i, &c)| {
                let k = self.grid.wavenumber(i);
                acc + self.grid.basis_weight(i) * k * k * c * c
            })
    }

    /// Point evaluation of the band-limited interpolant.
    pub fn eval(&self, coeffs: &[T], x: T) -> T {
        coeffs
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, &c)| acc + c * self.grid.basis_value(i, x))
    }
}

/// Zero-pads modal coefficients onto a finer grid of the same boundary type.
pub fn pad_coeffs<T: Scalar>(coeffs: &[T], fine_len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); fine_len];
    out[..coeffs.len()].copy_from_slice(coeffs);
    out
}

/// Real-valued samples of a function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T: Scalar = f64> {
    grid: Grid1D<T>,
    samples: Vec<T>,
}

impl<T: Scalar> Field<T> {
    pub fn new(grid: Grid1D<T>, samples: Vec<T>) -> Result<Self, FieldError> {
        if samples.len() != grid.resolution() {
            return Err(FieldError::LengthMismatch {
                expected: grid.resolution(),
                got: samples.len(),
            });
        }
        if let Some((index, v)) = samples.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FieldError::NonFinite {
                index,
                value: v.to_f64_lossy(),
            });
        }
        Ok(Field { grid, samples })
    }

    pub(crate) fn from_raw(grid: Grid1D<T>, samples: Vec<T>) -> Self {
        debug_assert_eq!(samples.len(), grid.resolution());
        Field { grid, samples }
    }

    pub fn zeros(grid: Grid1D<T>) -> Self {
        Field::from_raw(grid, vec![T::zero(); grid.resolution()])
    }

    pub fn constant(grid: Grid1D<T>, c: T) -> Self {
        Field::from_raw(grid, vec![c; grid.resolution()])
    }

    /// Samples `f` at the grid points.
    pub fn from_fn(grid: Grid1D<T>, f: impl Fn(T) -> T) -> Result<Self, FieldError> {
        Field::new(grid, grid.points().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.samples.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn to_spectral(&self) -> Spectrum<T> {
        let ops = SpectralOps::new(self.grid);
        Spectrum {
            grid: self.grid,
            coeffs: ops.analyze(&self.samples),
        }
    }

    pub fn derivative(&self) -> Field<T> {
        let ops = SpectralOps::new(self.grid);
        let coeffs = ops.analyze(&self.samples);
        Field::from_raw(self.grid, ops.derivative_samples(&coeffs))
    }

    /// `sum_j f_j g_j dx`, equal to the L^2 inner product of the band-limited
    /// interpolants since both transforms are orthogonal.
    pub fn inner(&self, other: &Field<T>) -> Result<T, FieldError> {
        if self.grid != other.grid {
            return Err(FieldError::GridMismatch);
        }
        let s = self
            .samples
            .iter()
            .zip(&other.samples)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        Ok(s * self.grid.dx())
    }

    pub fn l2_norm(&self) -> T {
        self.to_spectral().l2_norm()
    }

    /// `||f_x||_{L^2}`.
    pub fn dx_norm(&self) -> T {
        let ops = SpectralOps::new(self.grid);
        ops.dx_l2_sq(&ops.analyze(&self.samples)).sqrt()
    }

    /// `||f||_{H^1}` with `||f||^2_{H^1} = ||f||^2 / L^2 + ||f_x||^2`.
    pub fn h1_norm(&self) -> T {
        let l = self.grid.length();
        let l2 = self.l2_norm();
        let dx = self.dx_norm();
        (l2 * l2 / (l * l) + dx * dx).sqrt()
    }

    /// `int f^4 dx`, evaluated on a twice refined grid where the quadrature is
    /// exact for band-limited fields.
    pub fn l4_pow4(&self) -> T {
        let fine_grid = self.grid.refined(2);
        let fine = SpectralOps::new(fine_grid).synthesize(&pad_coeffs(
            &self.to_spectral().coeffs,
            fine_grid.resolution(),
        ));
        let s = fine.iter().fold(T::zero(), |acc, &v| {
            let v2 = v * v;
            acc + v2 * v2
        });
        s * fine_grid.dx()
    }

    /// Evaluates the band-limited interpolant at an arbitrary point.
    pub fn eval(&self, x: T) -> T {
        let ops = SpectralOps::new(self.grid);
        ops.eval(&ops.analyze(&self.samples), x)
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: T, other: &Field<T>) -> Result<Field<T>, FieldError> {
        if self.grid != other.grid {
            return Err(FieldError::GridMismatch);
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(&x, &y)| x + a * y)
            .collect();
        Ok(Field::from_raw(self.grid, samples))
    }

    pub fn scaled(&self, a: T) -> Field<T> {
        Field::from_raw(self.grid, self.samples.iter().map(|&v| a * v).collect())
    }
}

/// Modal coefficients of a field (layout described in the module docs).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T: Scalar = f64> {
    grid: Grid1D<T>,
    coeffs: Vec<T>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn new(grid: Grid1D<T>, coeffs: Vec<T>) -> Result<Self, FieldError> {
        if coeffs.len() != grid.resolution() {
            return Err(FieldError::LengthMismatch {
                expected: grid.resolution(),
                got: coeffs.len(),
            });
        }
        if let Some((index, v)) = coeffs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FieldError::NonFinite {
                index,
                value: v.to_f64_lossy(),
            });
        }
        Ok(Spectrum { grid, coeffs })
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn to_field(&self) -> Field<T> {
        Field::from_raw(self.grid, SpectralOps::new(self.grid).synthesize(&self.coeffs))
    }

    /// L^2 norm from the Parseval-weighted coefficients.
    pub fn l2_norm(&self) -> T {
        SpectralOps::new(self.grid).l2_sq(&self.coeffs).sqrt()
    }
}
