//! Finite-rank approximate interpolants `I_h` and their observation and
//! actuation maps.
//!
//! The domain `[0, L]` is split into `N` cells `J_k = [(k-1)h, kh]`,
//! `h = L/N`. Four families are provided:
//!
//! * volume averages: `I_h(phi) = sum_k mean_{J_k}(phi) chi_{J_k}`
//! * nodal values: `I_h(phi) = sum_k phi(xbar_k) chi_{J_k}`, `xbar_k in J_k`
//! * Fourier projection: `I_h(phi) = sum_k phihat_k cos(k pi x / L)` over
//!   `k = 0..=N` (or `k = 1..=N` without the mean)
//! * delta-actuated nodes: observations `phi(xbar_k)`, actuation
//!   `h sum_k obs_k delta(x - x_k)` on a periodic grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Boundary, Field, FieldError, Grid1D, SpectralOps};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpolantError {
    #[error("interpolant rank must be positive")]
    ZeroRank,
    #[error("rank {rank} is not resolved by {resolution} grid cells (need rank <= M/4)")]
    RankTooLarge { rank: usize, resolution: usize },
    #[error("grid resolution {resolution} is not a multiple of the rank {rank}")]
    NotMultiple { rank: usize, resolution: usize },
    #[error("{kind} does not support this operation")]
    WrongKind { kind: InterpolantKind },
    #[error("{kind} requires a {required} grid")]
    Boundary {
        kind: InterpolantKind,
        required: Boundary,
    },
    #[error("expected {expected} points, got {got}")]
    PointCount { expected: usize, got: usize },
    #[error("point {x} lies outside its cell J_{cell} = [{lo}, {hi}]")]
    PointOutsideCell { cell: usize, x: f64, lo: f64, hi: f64 },
    #[error("actuation points {first} and {second} fall in the same grid cell {grid_cell}")]
    SharedActuationCell {
        first: usize,
        second: usize,
        grid_cell: usize,
    },
    #[error("interpolant domain length {spec} differs from grid length {grid}")]
    LengthMismatch { spec: f64, grid: f64 },
    #[error("expected {expected} observations, got {got}")]
    ObservationCount { expected: usize, got: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolantKind {
    VolumeAverages,
    NodalIndicator,
    FourierProjection,
    DeltaNodal,
}

impl std::fmt::Display for InterpolantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            InterpolantKind::VolumeAverages => "volume_averages",
            InterpolantKind::NodalIndicator => "nodal_indicator",
            InterpolantKind::FourierProjection => "fourier_projection",
            InterpolantKind::DeltaNodal => "delta_nodal",
        };
        f.write_str(s)
    }
}

impl InterpolantKind {
    /// Boundary type the closed loop with this controller is posed on.
    pub fn boundary(self) -> Boundary {
        match self {
            InterpolantKind::DeltaNodal => Boundary::Periodic,
            _ => Boundary::Neumann,
        }
    }
}

/// Which controller family, its rank, and its observation/actuation points.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolantSpec<T: Scalar = f64> {
    kind: InterpolantKind,
    rank: usize,
    length: T,
    obs_points: Vec<T>,
    act_points: Vec<T>,
    include_mean: bool,
}

impl<T: Scalar> InterpolantSpec<T> {
    /// Rank-`n` interpolant on `[0, length]` with observation and actuation
    /// points at the cell midpoints; Fourier projections include the mean.
    pub fn new(kind: InterpolantKind, length: T, rank: usize) -> Result<Self, InterpolantError> {
        if rank == 0 {
            return Err(InterpolantError::ZeroRank);
        }
        if !(length.is_finite() && length > T::zero()) {
            return Err(FieldError::BadLength(length.to_f64_lossy()).into());
        }
        let h = length / T::from_usize_exact(rank);
        let mids: Vec<T> = (0..rank)
            .map(|k| (T::from_usize_exact(k) + T::lit(0.5)) * h)
            .collect();
        Ok(InterpolantSpec {
            kind,
            rank,
            length,
            obs_points: mids.clone(),
            act_points: mids,
            include_mean: true,
        })
    }

    pub fn volume(length: T, rank: usize) -> Result<Self, InterpolantError> {
        Self::new(InterpolantKind::VolumeAverages, length, rank)
    }

    pub fn nodal(length: T, rank: usize) -> Result<Self, InterpolantError> {
        Self::new(InterpolantKind::NodalIndicator, length, rank)
    }

    pub fn fourier(length: T, rank: usize, include_mean: bool) -> Result<Self, InterpolantError> {
        Ok(Self::new(InterpolantKind::FourierProjection, length, rank)?.with_mean(include_mean))
    }

    pub fn delta(length: T, rank: usize) -> Result<Self, InterpolantError> {
        Self::new(InterpolantKind::DeltaNodal, length, rank)
    }

    pub fn with_mean(mut self, include_mean: bool) -> Self {
        self.include_mean = include_mean;
        self
    }

    pub fn with_obs_points(mut self, points: Vec<T>) -> Result<Self, InterpolantError> {
        self.check_points(&points)?;
        self.obs_points = points;
        Ok(self)
    }

    pub fn with_act_points(mut self, points: Vec<T>) -> Result<Self, InterpolantError> {
        self.check_points(&points)?;
        self.act_points = points;
        Ok(self)
    }

    fn check_points(&self, points: &[T]) -> Result<(), InterpolantError> {
        if points.len() != self.rank {
            return Err(InterpolantError::PointCount {
                expected: self.rank,
                got: points.len(),
            });
        }
        // cell edges are computed in floating point; allow a few ulps
        let slack = self.h() * T::lit(1e-12);
        for (k, &x) in points.iter().enumerate() {
            let (lo, hi) = self.cell(k);
            if !(x.is_finite() && x >= lo - slack && x <= hi + slack) {
                return Err(InterpolantError::PointOutsideCell {
                    cell: k + 1,
                    x: x.to_f64_lossy(),
                    lo: lo.to_f64_lossy(),
                    hi: hi.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> InterpolantKind {
        self.kind
    }

    /// `N`, the number of cells.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn length(&self) -> T {
        self.length
    }

    pub fn include_mean(&self) -> bool {
        self.include_mean
    }

    pub fn obs_points(&self) -> &[T] {
        &self.obs_points
    }

    pub fn act_points(&self) -> &[T] {
        &self.act_points
    }

    /// `h = L / N`.
    pub fn h(&self) -> T {
        self.length / T::from_usize_exact(self.rank)
    }

    /// Endpoints of the 0-based cell `k`, i.e. `J_{k+1}`.
    pub fn cell(&self, k: usize) -> (T, T) {
        let h = self.h();
        (T::from_usize_exact(k) * h, T::from_usize_exact(k + 1) * h)
    }

    /// Number of observed values: `N`, or `N + 1` for a Fourier projection
    /// that keeps the mean.
    pub fn observation_count(&self) -> usize {
        match self.kind {
            InterpolantKind::FourierProjection if self.include_mean => self.rank + 1,
            _ => self.rank,
        }
    }

    /// Lowest and highest cosine mode of a Fourier projection.
    fn fourier_modes(&self) -> std::ops::RangeInclusive<usize> {
        let first = if self.include_mean { 0 } else { 1 };
        first..=self.rank
    }

    /// Constant `c` with `||phi - I_h phi|| <= c h ||phi||_{H^1}` for every
    /// `phi`, or `None` when no such bound holds.
    pub fn certified_constant(&self) -> Option<T> {
        match self.kind {
            InterpolantKind::VolumeAverages | InterpolantKind::NodalIndicator => Some(T::one()),
            InterpolantKind::FourierProjection if self.include_mean => Some(T::FRAC_1_PI()),
            // constants are invisible to k >= 1 modes, and deltas are not L^2 maps
            InterpolantKind::FourierProjection | InterpolantKind::DeltaNodal => None,
        }
    }

    fn check_grid(&self, grid: &Grid1D<T>) -> Result<(), InterpolantError> {
        let tol = T::lit(1e-12) * self.length.max(grid.length());
        if (self.length - grid.length()).abs() > tol {
            return Err(InterpolantError::LengthMismatch {
                spec: self.length.to_f64_lossy(),
                grid: grid.length().to_f64_lossy(),
            });
        }
        if 4 * self.rank > grid.resolution() {
            return Err(InterpolantError::RankTooLarge {
                rank: self.rank,
                resolution: grid.resolution(),
            });
        }
        let needs_neumann = matches!(
            self.kind,
            InterpolantKind::VolumeAverages | InterpolantKind::FourierProjection
        );
        if needs_neumann && grid.boundary() != Boundary::Neumann {
            return Err(InterpolantError::Boundary {
                kind: self.kind,
                required: Boundary::Neumann,
            });
        }
        Ok(())
    }

    fn check_piecewise(&self, grid: &Grid1D<T>) -> Result<(), InterpolantError> {
        if grid.boundary() != Boundary::Neumann {
            return Err(InterpolantError::Boundary {
                kind: self.kind,
                required: Boundary::Neumann,
            });
        }
        if grid.resolution() % self.rank != 0 {
            return Err(InterpolantError::NotMultiple {
                rank: self.rank,
                resolution: grid.resolution(),
            });
        }
        Ok(())
    }
}

/// Observed values: cell averages, point values or cosine coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations<T: Scalar = f64> {
    values: Vec<T>,
}

impl<T: Scalar> Observations<T> {
    pub fn new(values: Vec<T>) -> Self {
        Observations { values }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `gamma^2 = sum_k obs_k^2`.
pub fn gamma_sq<T: Scalar>(obs: &Observations<T>) -> T {
    obs.values.iter().fold(T::zero(), |acc, &v| acc + v * v)
}

/// Observes `f` through `spec`. Point values use the spectral interpolant of
/// `f`, so they are exact for band-limited fields.
pub fn observe<T: Scalar>(
    f: &Field<T>,
    spec: &InterpolantSpec<T>,
) -> Result<Observations<T>, InterpolantError> {
    let grid = *f.grid();
    spec.check_grid(&grid)?;
    if spec.kind == InterpolantKind::VolumeAverages && grid.resolution() % spec.rank != 0 {
        return Err(InterpolantError::NotMultiple {
            rank: spec.rank,
            resolution: grid.resolution(),
        });
    }
    let ops = SpectralOps::new(grid);
    let coeffs = ops.analyze(f.samples());
    let values = match spec.kind {
        InterpolantKind::VolumeAverages => block_means(f.samples(), spec.rank),
        InterpolantKind::NodalIndicator | InterpolantKind::DeltaNodal => spec
            .obs_points
            .iter()
            .map(|&x| ops.eval(&coeffs, x))
            .collect(),
        InterpolantKind::FourierProjection => spec.fourier_modes().map(|k| coeffs[k]).collect(),
    };
    Ok(Observations { values })
}

/// Samples of `I_h` built from observations.
pub fn interpolate<T: Scalar>(
    obs: &Observations<T>,
    spec: &InterpolantSpec<T>,
    grid: &Grid1D<T>,
) -> Result<Field<T>, InterpolantError> {
    spec.check_grid(grid)?;
    check_count(obs, spec)?;
    match spec.kind {
        InterpolantKind::DeltaNodal => Err(InterpolantError::WrongKind { kind: spec.kind }),
        InterpolantKind::VolumeAverages | InterpolantKind::NodalIndicator => {
            spec.check_piecewise(grid)?;
            Ok(Field::from_raw(*grid, piecewise(&obs.values, grid.resolution())))
        }
        InterpolantKind::FourierProjection => {
            let mut coeffs = vec![T::zero(); grid.resolution()];
            for (k, &v) in spec.fourier_modes().zip(&obs.values) {
                coeffs[k] = v;
            }
            Ok(Field::from_raw(*grid, SpectralOps::new(*grid).synthesize(&coeffs)))
        }
    }
}

/// Grid realization of `h sum_k obs_k delta(x - x_k)`: the cell holding
/// `x_k` carries `obs_k h / dx`, so the discrete integral against a test
/// field `phi` is `h sum_k obs_k phi(x_k)` up to `O(dx)`.
pub fn actuate_delta<T: Scalar>(
    obs: &Observations<T>,
    spec: &InterpolantSpec<T>,
    grid: &Grid1D<T>,
) -> Result<Field<T>, InterpolantError> {
    let cells = delta_cells(spec, grid)?;
    check_count(obs, spec)?;
    let mut samples = vec![T::zero(); grid.resolution()];
    let weight = spec.h() / grid.dx();
    for (&j, &v) in cells.iter().zip(&obs.values) {
        samples[j] = v * weight;
    }
    Ok(Field::from_raw(*grid, samples))
}

/// `||f - I_h f||_{L^2}`.
pub fn defect<T: Scalar>(f: &Field<T>, spec: &InterpolantSpec<T>) -> Result<T, InterpolantError> {
    let ih = interpolate(&observe(f, spec)?, spec, f.grid())?;
    Ok(f.axpy(-T::one(), &ih)?.l2_norm())
}

fn check_count<T: Scalar>(
    obs: &Observations<T>,
    spec: &InterpolantSpec<T>,
) -> Result<(), InterpolantError> {
    if obs.len() != spec.observation_count() {
        return Err(InterpolantError::ObservationCount {
            expected: spec.observation_count(),
            got: obs.len(),
        });
    }
    Ok(())
}

fn delta_cells<T: Scalar>(
    spec: &InterpolantSpec<T>,
    grid: &Grid1D<T>,
) -> Result<Vec<usize>, InterpolantError> {
    if spec.kind != InterpolantKind::DeltaNodal {
        return Err(InterpolantError::WrongKind { kind: spec.kind });
    }
    if grid.boundary() != Boundary::Periodic {
        return Err(InterpolantError::Boundary {
            kind: spec.kind,
            required: Boundary::Periodic,
        });
    }
    spec.check_grid(grid)?;
    let cells: Vec<usize> = spec.act_points.iter().map(|&x| grid.cell_of(x)).collect();
    for (a, &ca) in cells.iter().enumerate() {
        if let Some(b) = cells[a + 1..].iter().position(|&cb| cb == ca) {
            return Err(InterpolantError::SharedActuationCell {
                first: a + 1,
                second: a + b + 2,
                grid_cell: ca,
            });
        }
    }
    Ok(cells)
}

fn block_means<T: Scalar>(samples: &[T], rank: usize) -> Vec<T> {
    let per = samples.len() / rank;
    let inv = T::one() / T::from_usize_exact(per);
    samples
        .chunks(per)
        .map(|c| c.iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect()
}

fn piecewise<T: Scalar>(values: &[T], resolution: usize) -> Vec<T> {
    let per = resolution / values.len();
    values
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, per))
        .collect()
}

/// An interpolant bound to a grid with its evaluation tables precomputed,
/// for repeated use inside a time stepper.
#[derive(Debug, Clone)]
pub struct Controller<T: Scalar = f64> {
    spec: InterpolantSpec<T>,
    grid: Grid1D<T>,
    // basis values at the observation points, one row per point
    eval_rows: Vec<Vec<T>>,
    act_cells: Vec<usize>,
}

impl<T: Scalar> Controller<T> {
    pub fn new(spec: InterpolantSpec<T>, grid: Grid1D<T>) -> Result<Self, InterpolantError> {
        if grid.boundary() != spec.kind.boundary() {
            return Err(InterpolantError::Boundary {
                kind: spec.kind,
                required: spec.kind.boundary(),
            });
        }
        spec.check_grid(&grid)?;
        let mut act_cells = Vec::new();
        match spec.kind {
            InterpolantKind::VolumeAverages | InterpolantKind::NodalIndicator => {
                spec.check_piecewise(&grid)?
            }
            InterpolantKind::DeltaNodal => act_cells = delta_cells(&spec, &grid)?,
            InterpolantKind::FourierProjection => {}
        }
        let eval_rows = match spec.kind {
            InterpolantKind::NodalIndicator | InterpolantKind::DeltaNodal => spec
                .obs_points
                .iter()
                .map(|&x| {
                    (0..grid.resolution())
                        .map(|i| grid.basis_value(i, x))
                        .collect()
                })
                .collect(),
            _ => Vec::new(),
        };
        Ok(Controller {
            spec,
            grid,
            eval_rows,
            act_cells,
        })
    }

    pub fn spec(&self) -> &InterpolantSpec<T> {
        &self.spec
    }

    /// Observations from samples and their modal coefficients.
    pub fn observe(&self, samples: &[T], coeffs: &[T]) -> Observations<T> {
        let values = match self.spec.kind {
            InterpolantKind::VolumeAverages => block_means(samples, self.spec.rank),
            InterpolantKind::NodalIndicator | InterpolantKind::DeltaNodal => self
                .eval_rows
                .iter()
                .map(|row| row.iter().zip(coeffs).fold(T::zero(), |a, (&b, &c)| a + b * c))
                .collect(),
            InterpolantKind::FourierProjection => {
                self.spec.fourier_modes().map(|k| coeffs[k]).collect()
            }
        };
        Observations { values }
    }

    /// Samples of the control field: `I_h(u)`, or the discrete delta
    /// actuation for the nodal-delta family.
    pub fn control_samples(&self, obs: &Observations<T>, ops: &SpectralOps<T>) -> Vec<T> {
        let m = self.grid.resolution();
        match self.spec.kind {
            InterpolantKind::VolumeAverages | InterpolantKind::NodalIndicator => {
                piecewise(&obs.values, m)
            }
            InterpolantKind::FourierProjection => {
                let mut coeffs = vec![T::zero(); m];
                for (k, &v) in self.spec.fourier_modes().zip(&obs.values) {
                    coeffs[k] = v;
                }
                ops.synthesize(&coeffs)
            }
            InterpolantKind::DeltaNodal => {
                let mut s = vec![T::zero(); m];
                let w = self.spec.h() / self.grid.dx();
                for (&j, &v) in self.act_cells.iter().zip(&obs.values) {
                    s[j] = v * w;
                }
                s
            }
        }
    }

    /// `||I_h u||_{L^2}`. For the delta family this is the norm of the
    /// piecewise-constant nodal interpolant `sum_k u(xbar_k) chi_{J_k}`.
    pub fn interpolant_l2(&self, obs: &Observations<T>) -> T {
        match self.spec.kind {
            InterpolantKind::FourierProjection => {
                let l = self.spec.length;
                self.spec
                    .fourier_modes()
                    .zip(&obs.values)
                    .fold(T::zero(), |a, (k, &v)| {
                        let w = if k == 0 { l } else { l * T::lit(0.5) };
                        a + w * v * v
                    })
                    .sqrt()
            }
            _ => (self.spec.h() * gamma_sq(obs)).sqrt(),
        }
    }
}
