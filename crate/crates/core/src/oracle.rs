//! Independent references: closed-form solutions and a brute-force search
//! for the interpolation constant `c` in `||phi - I_h phi|| <= c h ||phi||_{H^1}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::ClosedLoopParams;
use crate::field::{Boundary, Field, Grid1D, SpectralOps};
use crate::interpolants::{Controller, InterpolantError, InterpolantKind, InterpolantSpec};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("ensemble needs at least one trial")]
    NoTrials,
    #[error("kmax = {kmax} exceeds the band limit M/8 = {limit}")]
    BandLimit { kmax: usize, limit: usize },
    #[error("{0} has no L^2 interpolation constant")]
    Unsupported(InterpolantKind),
    #[error("every trial function is constant (largest defect {max_defect})")]
    Degenerate { max_defect: f64 },
    #[error(transparent)]
    Interpolant(#[from] InterpolantError),
}

/// Per-mode amplitude scaling of random trial functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeLaw {
    /// `U[-1, 1] / (k + 1)`
    #[default]
    InverseIndex,
    /// `U[-1, 1]`
    Flat,
}

/// Coefficients of a seeded random band-limited function in the modal layout
/// of `boundary` (cosines `0..=kmax`, or the periodic cos/sin pairs).
/// Trials draw from independent streams of the same seed.
pub fn random_band_coefficients(seed: u64, trial: u64, kmax: usize, boundary: Boundary) -> Vec<f64> {
    random_coefficients(seed, trial, kmax, boundary, AmplitudeLaw::InverseIndex)
}

fn random_coefficients(
    seed: u64,
    trial: u64,
    kmax: usize,
    boundary: Boundary,
    law: AmplitudeLaw,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let mut draw = |k: usize| {
        let v: f64 = rng.gen_range(-1.0..=1.0);
        match law {
            AmplitudeLaw::InverseIndex => v / (k + 1) as f64,
            AmplitudeLaw::Flat => v,
        }
    };
    match boundary {
        Boundary::Neumann => (0..=kmax).map(draw).collect(),
        Boundary::Periodic => {
            let mut c = vec![draw(0)];
            for k in 1..=kmax {
                c.push(draw(k));
                c.push(draw(k));
            }
            c
        }
    }
}

/// Seeded family of random trial functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialEnsemble {
    pub seed: u64,
    pub n_trials: usize,
    pub kmax: usize,
    #[serde(default)]
    pub law: AmplitudeLaw,
}

impl TrialEnsemble {
    pub fn new(seed: u64, n_trials: usize, kmax: usize) -> Result<Self, OracleError> {
        if n_trials == 0 {
            return Err(OracleError::NoTrials);
        }
        Ok(TrialEnsemble {
            seed,
            n_trials,
            kmax,
            law: AmplitudeLaw::InverseIndex,
        })
    }

    pub fn with_law(mut self, law: AmplitudeLaw) -> Self {
        self.law = law;
        self
    }

    fn check<T: Scalar>(&self, grid: &Grid1D<T>) -> Result<(), OracleError> {
        if self.n_trials == 0 {
            return Err(OracleError::NoTrials);
        }
        let limit = grid.resolution() / 8;
        if self.kmax > limit {
            return Err(OracleError::BandLimit {
                kmax: self.kmax,
                limit,
            });
        }
        Ok(())
    }

    /// Full-length modal coefficients of trial `i`.
    pub fn coefficients<T: Scalar>(&self, i: usize, grid: &Grid1D<T>) -> Result<Vec<T>, OracleError> {
        self.check(grid)?;
        let raw = random_coefficients(self.seed, i as u64, self.kmax, grid.boundary(), self.law);
        let mut c = vec![T::zero(); grid.resolution()];
        for (dst, &v) in c.iter_mut().zip(&raw) {
            *dst = T::lit(v);
        }
        Ok(c)
    }

    pub fn field<T: Scalar>(&self, i: usize, grid: &Grid1D<T>) -> Result<Field<T>, OracleError> {
        let c = self.coefficients(i, grid)?;
        let samples = SpectralOps::new(*grid).synthesize(&c);
        Ok(Field::new(*grid, samples).expect("finite by construction"))
    }
}

/// Solution of the linearization about zero with initial state
/// `A cos(k pi x / L)`: `A e^{(alpha - nu (pi k / L)^2) t} cos(k pi x / L)`.
pub fn analytic_linear_mode<T: Scalar>(
    k: usize,
    amplitude: T,
    t: T,
    p: &ClosedLoopParams<T>,
    grid: &Grid1D<T>,
) -> Field<T> {
    let kk = T::from_usize_exact(k) * T::PI() / p.length;
    let a = amplitude * ((p.alpha - p.nu * kk * kk) * t).exp();
    Field::from_fn(*grid, |x| a * (kk * x).cos()).expect("finite amplitude")
}

/// Exact solution of `u' = alpha u - u^3` from `c0`.
pub fn logistic_constant_state<T: Scalar>(c0: T, t: T, p: &ClosedLoopParams<T>) -> T {
    let a = p.alpha;
    // e^{-alpha t} form stays finite for large t
    let decay = (-a * t).exp();
    let denom = (a * decay * decay + c0 * c0 * (T::one() - decay * decay)).sqrt();
    if denom == T::zero() {
        return T::zero();
    }
    a.sqrt() * c0 / denom
}

/// Result of the empirical constant search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhEstimate {
    /// Largest ratio found, after refinement.
    pub ratio: f64,
    /// Largest ratio over the raw ensemble.
    pub ensemble_ratio: f64,
    pub worst_trial: usize,
    /// Trials with a non-constant function.
    pub trials_used: usize,
    pub max_defect: f64,
}

struct RatioProbe<T: Scalar> {
    controller: Controller<T>,
    ops: SpectralOps<T>,
    h: T,
}

impl<T: Scalar> RatioProbe<T> {
    /// `(||phi - I_h phi||, ||phi_x||)`.
    fn parts(&self, coeffs: &[T]) -> (T, T) {
        let samples = self.ops.synthesize(coeffs);
        let obs = self.controller.observe(&samples, coeffs);
        let ih = self.controller.control_samples(&obs, &self.ops);
        let dx = self.ops.grid().dx();
        let d = samples
            .iter()
            .zip(&ih)
            .fold(T::zero(), |a, (&u, &v)| a + (u - v) * (u - v));
        ((d * dx).sqrt(), self.ops.dx_l2_sq(coeffs).sqrt())
    }

    fn ratio(&self, coeffs: &[T]) -> Option<T> {
        let (d, gx) = self.parts(coeffs);
        (gx > T::epsilon().sqrt() * (T::one() + d)).then(|| d / (self.h * gx))
    }
}

/// Largest observed `||phi - I_h phi|| / (h ||phi_x||)` over the ensemble,
/// sharpened by coordinate ascent on the maximizer's coefficients. This is
/// a lower bound for the sharp constant.
pub fn empirical_bh_constant<T: Scalar>(
    spec: &InterpolantSpec<T>,
    ens: &TrialEnsemble,
    grid: &Grid1D<T>,
) -> Result<BhEstimate, OracleError> {
    if spec.kind() == InterpolantKind::DeltaNodal {
        return Err(OracleError::Unsupported(spec.kind()));
    }
    ens.check(grid)?;
    let probe = RatioProbe {
        controller: Controller::new(spec.clone(), *grid)?,
        ops: SpectralOps::new(*grid),
        h: spec.h(),
    };

    let trials: Vec<(T, Option<T>)> = (0..ens.n_trials)
        .into_par_iter()
        .map(|i| {
            let c = ens.coefficients(i, grid).expect("checked");
            let (d, _) = probe.parts(&c);
            (d, probe.ratio(&c))
        })
        .collect();
    let max_defect = trials
        .iter()
        .fold(0.0f64, |a, (d, _)| a.max(d.to_f64_lossy()));
    let mut best: Option<(usize, T)> = None;
    let mut used = 0;
    for (i, (_, r)) in trials.iter().enumerate() {
        if let Some(r) = *r {
            used += 1;
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((i, r));
            }
        }
    }
    let Some((worst, ensemble_ratio)) = best else {
        return Err(OracleError::Degenerate { max_defect });
    };

    let mut coeffs = ens.coefficients(worst, grid)?;
    let active = ens.kmax.min(grid.resolution() / 2);
    let n_active = match grid.boundary() {
        Boundary::Neumann => active + 1,
        Boundary::Periodic => 2 * active + 1,
    };
    let mut ratio = ensemble_ratio;
    let mut step = coeffs[..n_active]
        .iter()
        .fold(T::zero(), |a, v| a.max(v.abs()))
        * T::lit(0.5);
    for _ in 0..100 {
        let mut improved = false;
        for i in 0..n_active {
            for sign in [T::one(), -T::one()] {
                let old = coeffs[i];
                coeffs[i] = old + sign * step;
                match probe.ratio(&coeffs) {
                    Some(r) if r > ratio => {
                        ratio = r;
                        improved = true;
                    }
                    _ => coeffs[i] = old,
                }
            }
        }
        if !improved {
            step = step * T::lit(0.5);
        }
    }

    Ok(BhEstimate {
        ratio: ratio.to_f64_lossy(),
        ensemble_ratio: ensemble_ratio.to_f64_lossy(),
        worst_trial: worst,
        trials_used: used,
        max_defect,
    })
}
