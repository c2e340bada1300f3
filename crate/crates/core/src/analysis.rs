//! Decay-rate extraction, bound verification, linear mode counts and the
//! minimal-rank sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    simulate_full, ClosedLoopParams, DynamicsError, InitialCondition, Scheme, SimConfig,
    TrajectoryRecord,
};
use crate::field::Grid1D;
use crate::interpolants::{InterpolantKind, InterpolantSpec};
use crate::scalar::Scalar;

/// Below this `||u||^2` samples are excluded from log fits.
pub const UNDERFLOW_FLOOR: f64 = 1e-280;
/// Minimum number of samples in a fit window.
pub const MIN_FIT_SAMPLES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("fit window from t0 = {t0} has {samples} usable samples, need {MIN_FIT_SAMPLES}")]
    NoFit { t0: f64, samples: usize },
    #[error("empty rank range")]
    EmptyRange,
    #[error("rank range must be strictly increasing")]
    UnorderedRange,
    #[error("no rank in range stabilizes")]
    NotFound { cells: Vec<SweepCell> },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Decay exponent of `||u(t)||^2 ~ C e^{-rate t}` on `[t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub window: (f64, f64),
    /// RMS deviation of `log ||u||^2` from the fitted line.
    pub residual: f64,
    pub samples: usize,
}

/// `nu (pi k / L)^2 - alpha`; negative means mode `k` grows.
pub fn linear_growth_rate<T: Scalar>(k: usize, p: &ClosedLoopParams<T>) -> T {
    let kk = T::from_usize_exact(k) * T::PI() / p.length;
    p.nu * kk * kk - p.alpha
}

/// Number of cosine modes that grow under the linearization about zero.
pub fn unstable_mode_count<T: Scalar>(p: &ClosedLoopParams<T>) -> usize {
    (0..)
        .take_while(|&k| linear_growth_rate(k, p) < T::zero())
        .count()
}

/// Least-squares fit of `log ||u||^2` against `t` for `t >= t0`, stopping at
/// the first sample below [`UNDERFLOW_FLOOR`].
pub fn fit_decay_rate<T: Scalar>(traj: &TrajectoryRecord<T>, t0: f64) -> Result<DecayFit, AnalysisError> {
    let pts: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(traj.l2_sq())
        .map(|(t, e)| (t.to_f64_lossy(), e.to_f64_lossy()))
        .skip_while(|&(t, _)| t < t0)
        .take_while(|&(_, e)| e > UNDERFLOW_FLOOR && e.is_finite())
        .map(|(t, e)| (t, e.ln()))
        .collect();
    fit_log_series(&pts).ok_or(AnalysisError::NoFit {
        t0,
        samples: pts.len(),
    })
}

fn fit_log_series(pts: &[(f64, f64)]) -> Option<DecayFit> {
    let n = pts.len();
    if n < MIN_FIT_SAMPLES {
        return None;
    }
    let nf = n as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), &(t, y)| {
        (a + (t - tm) * (y - ym), b + (t - tm) * (t - tm))
    });
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let ss = pts
        .iter()
        .map(|&(t, y)| {
            let e = y - (ym + slope * (t - tm));
            e * e
        })
        .sum::<f64>();
    Some(DecayFit {
        rate: -slope,
        window: (pts[0].0, pts[n - 1].0),
        residual: (ss / nf).sqrt(),
        samples: n,
    })
}

/// True iff `||u(t_i)||^2 <= (1 + slack) e^{-r t_i} ||u(0)||^2` at every
/// recorded time.
pub fn verify_decay_bound<T: Scalar>(traj: &TrajectoryRecord<T>, r: f64, slack: f64) -> bool {
    let Some(e0) = traj.l2_sq().next() else {
        return true;
    };
    let e0 = e0.to_f64_lossy();
    traj.times.iter().zip(traj.l2_sq()).all(|(t, e)| {
        let bound = (1.0 + slack) * (-r * t.to_f64_lossy()).exp() * e0;
        e.to_f64_lossy() <= bound
    })
}

/// Radii of the absorbing balls in `L^2` and `H^1`:
///
/// ```text
/// R0^2 = (alpha + nu/L^2)^2 L^3 / nu
/// R1^2 = (1/nu) [(alpha + nu/L^2) L + R0^2] [1 + 2 (alpha + mu^2 c^2 h^2 / (2 nu))]
/// ```
///
/// `c h` is taken as zero for an open loop or an interpolant without a
/// certified constant.
pub fn absorbing_bounds<T: Scalar>(p: &ClosedLoopParams<T>) -> (f64, f64) {
    let nu = p.nu.to_f64_lossy();
    let alpha = p.alpha.to_f64_lossy();
    let l = p.length.to_f64_lossy();
    let mu = p.mu.to_f64_lossy();
    let a = alpha + nu / (l * l);
    let r0 = a * a * l.powi(3) / nu;
    let ch = p
        .control
        .as_ref()
        .and_then(|s| s.certified_constant().map(|c| (c * s.h()).to_f64_lossy()))
        .unwrap_or(0.0);
    let r1 = (a * l + r0) * (1.0 + 2.0 * (alpha + mu * mu * ch * ch / (2.0 * nu))) / nu;
    (r0, r1)
}

/// Gain as a function of `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MuRule {
    Constant { mu: f64 },
    /// `mu = factor * alpha`
    Proportional { factor: f64 },
}

impl MuRule {
    pub fn gain(&self, alpha: f64) -> f64 {
        match *self {
            MuRule::Constant { mu } => mu,
            MuRule::Proportional { factor } => factor * alpha,
        }
    }
}

/// Stabilization test: `||u(T)|| <= ratio ||u(0)||` at `T = horizon / alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilizationCriterion {
    pub ratio: f64,
    pub horizon: f64,
}

impl Default for StabilizationCriterion {
    fn default() -> Self {
        StabilizationCriterion {
            ratio: 1e-4,
            horizon: 20.0,
        }
    }
}

/// Discretization shared by all cells of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSetup {
    pub kind: InterpolantKind,
    /// Base resolution; each cell rounds it up to a multiple of `4 N`.
    pub resolution: usize,
    /// Upper bound on the step; cells use `min(dt, 0.2 / (4 alpha + mu))`.
    pub dt: f64,
    pub scheme: Scheme,
    pub ic: InitialCondition,
}

impl SweepSetup {
    pub fn resolution_for(&self, n: usize) -> usize {
        let q = 4 * n;
        self.resolution.max(q).div_ceil(q) * q
    }

    pub fn dt_for(&self, alpha: f64, mu: f64) -> f64 {
        self.dt.min(0.2 / (4.0 * alpha + mu))
    }
}

/// One `(alpha, N)` run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: f64,
    pub n: usize,
    pub mu: f64,
    pub resolution: usize,
    pub dt: f64,
    pub t_final: f64,
    /// `||u(T)|| / ||u(0)||`; NaN when the run failed.
    pub terminal_ratio: f64,
    pub stabilized: bool,
    pub error: Option<String>,
}

/// Runs one sweep cell.
pub fn sweep_cell(
    base: &ClosedLoopParams<f64>,
    mu_rule: MuRule,
    n: usize,
    decide: StabilizationCriterion,
    setup: &SweepSetup,
) -> SweepCell {
    let alpha = base.alpha;
    let mu = mu_rule.gain(alpha);
    let resolution = setup.resolution_for(n);
    let dt = setup.dt_for(alpha, mu);
    let t_final = decide.horizon / alpha;
    let mut cell = SweepCell {
        alpha,
        n,
        mu,
        resolution,
        dt,
        t_final,
        terminal_ratio: f64::NAN,
        stabilized: false,
        error: None,
    };
    let run = || -> Result<f64, String> {
        let spec = InterpolantSpec::new(setup.kind, base.length, n).map_err(|e| e.to_string())?;
        let p = ClosedLoopParams::new(base.nu, alpha, base.length, mu, Some(spec))
            .map_err(|e| e.to_string())?;
        let grid = Grid1D::new(base.length, resolution, setup.kind.boundary())
            .map_err(|e| e.to_string())?;
        // tolerance keeps e.g. 5 / 1e-3 at 5000 steps rather than 5001
        let steps = (t_final / dt * (1.0 - 1e-12)).ceil().max(1.0);
        let cfg = SimConfig {
            dt: t_final / steps,
            t_final,
            record_every: steps as usize,
            ic: setup.ic.clone(),
            grid,
            scheme: setup.scheme,
        };
        let out = simulate_full(&cfg, &p).map_err(|e| e.error.to_string())?;
        let l2 = &out.record.l2;
        let first = l2[0];
        let last = *l2.last().expect("non-empty record");
        Ok(if first > 0.0 { last / first } else { 0.0 })
    };
    match run() {
        Ok(ratio) => {
            cell.terminal_ratio = ratio;
            cell.stabilized = ratio <= decide.ratio;
        }
        Err(e) => cell.error = Some(e),
    }
    cell
}

/// All cells of a rank scan and the smallest stabilizing rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub minimal_n: usize,
    pub cells: Vec<SweepCell>,
}

/// Smallest `N` in `n_range` whose closed loop meets `decide`. Every rank
/// is simulated (linear scan), concurrently; results are ordered by `N`.
pub fn minimal_stabilizing_n(
    p_base: &ClosedLoopParams<f64>,
    mu_rule: MuRule,
    n_range: &[usize],
    decide: StabilizationCriterion,
    setup: &SweepSetup,
) -> Result<SweepOutcome, AnalysisError> {
    if n_range.is_empty() {
        return Err(AnalysisError::EmptyRange);
    }
    if n_range.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AnalysisError::UnorderedRange);
    }
    let cells: Vec<SweepCell> = n_range
        .par_iter()
        .map(|&n| sweep_cell(p_base, mu_rule, n, decide, setup))
        .collect();
    match cells.iter().find(|c| c.stabilized) {
        Some(c) => Ok(SweepOutcome {
            minimal_n: c.n,
            cells,
        }),
        None => Err(AnalysisError::NotFound { cells }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn synthetic(f: impl Fn(f64) -> f64, n: usize, dt: f64) -> TrajectoryRecord {
        let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let l2 = times.iter().map(|&t| f(t).sqrt()).collect();
        TrajectoryRecord {
            times,
            l2,
            ..Default::default()
        }
    }

    #[test]
    fn growth_rate_examples() {
        let p = ClosedLoopParams::open_loop(1.0, 4.0, PI).unwrap();
        assert_eq!(linear_growth_rate(0, &p), -4.0);
        assert!(linear_growth_rate(2, &p).abs() < 1e-12);
        assert!((linear_growth_rate(3, &p) - 5.0).abs() < 1e-12);
        assert_eq!(unstable_mode_count(&p), 2);
        let p = ClosedLoopParams::open_loop(1.0, 100.0, PI).unwrap();
        assert_eq!(unstable_mode_count(&p), 10);
        let p = ClosedLoopParams::open_loop(1.0, 1e-9, PI).unwrap();
        assert_eq!(unstable_mode_count(&p), 1);
    }

    #[test]
    fn fits_exact_exponentials() {
        let fit = fit_decay_rate(&synthetic(|t| (-2.0 * t).exp(), 50, 0.1), 0.0).unwrap();
        assert!((fit.rate - 2.0).abs() < 1e-10);
        let fit = fit_decay_rate(&synthetic(|t| 5.0 * (-0.5 * t).exp(), 50, 0.1), 1.0).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-10);
        assert!(fit.residual < 1e-12);
        assert!((fit.window.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_stops_at_floor() {
        // e^{-100 t} crosses 1e-280 near t = 6.45
        let traj = synthetic(|t| (-100.0 * t).exp(), 200, 0.05);
        let fit = fit_decay_rate(&traj, 0.0).unwrap();
        assert!((fit.rate - 100.0).abs() < 1e-8);
        assert!(fit.window.1 < 6.5);
        assert!(matches!(
            fit_decay_rate(&traj, 7.0),
            Err(AnalysisError::NoFit { samples: 0, .. })
        ));
        assert!(fit_decay_rate(&synthetic(|t| (-t).exp(), 9, 0.1), 0.0).is_err());
    }

    #[test]
    fn bound_verification() {
        assert!(verify_decay_bound(&synthetic(|_| 0.0, 10, 0.1), 1e6, 0.0));
        let traj = synthetic(|t| (-2.0 * t).exp(), 20, 0.1);
        assert!(!verify_decay_bound(&traj, 3.0, 0.05));
        assert!(verify_decay_bound(&traj, 2.0, 1e-12));
        assert!(verify_decay_bound(&TrajectoryRecord::<f64>::default(), 1.0, 0.0));
    }

    #[test]
    fn absorbing_examples() {
        let p = ClosedLoopParams::open_loop(1.0, 1.0, 1.0).unwrap();
        let (r0, r1) = absorbing_bounds(&p);
        assert!((r0 - 4.0).abs() < 1e-14);
        // [(2)(1) + 4](1 + 2)
        assert!((r1 - 18.0).abs() < 1e-12);
        let spec = InterpolantSpec::volume(1.0, 4).unwrap();
        let p = ClosedLoopParams::new(2.0, 1.0, 1.0, 3.0, Some(spec)).unwrap();
        let (r0, r1) = absorbing_bounds(&p);
        assert!((r0 - 4.5).abs() < 1e-14);
        let expect = (3.0 + 4.5) * (1.0 + 2.0 * (1.0 + 9.0 / 16.0 / 4.0)) / 2.0;
        assert!((r1 - expect).abs() < 1e-12);
        // R0^2 grows linearly in nu
        let big = absorbing_bounds(&ClosedLoopParams::open_loop(1e6, 1.0, 1.0).unwrap()).0;
        assert!((big / 1e6 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn sweep_resolution_rounding() {
        let setup = SweepSetup {
            kind: InterpolantKind::VolumeAverages,
            resolution: 64,
            dt: 1e-3,
            scheme: Scheme::EtdRk2,
            ic: InitialCondition::Constant { value: 0.0 },
        };
        assert_eq!(setup.resolution_for(1), 64);
        assert_eq!(setup.resolution_for(3), 72);
        assert_eq!(setup.resolution_for(20), 80);
        assert!((setup.dt_for(64.0, 320.0) - 0.2 / 576.0).abs() < 1e-18);
    }

    #[test]
    fn range_validation() {
        let p = ClosedLoopParams::open_loop(1.0, 1.0, 1.0).unwrap();
        let setup = SweepSetup {
            kind: InterpolantKind::VolumeAverages,
            resolution: 32,
            dt: 1e-3,
            scheme: Scheme::Etd1,
            ic: InitialCondition::Constant { value: 0.1 },
        };
        let rule = MuRule::Constant { mu: 1.0 };
        let d = StabilizationCriterion::default();
        assert_eq!(
            minimal_stabilizing_n(&p, rule, &[], d, &setup),
            Err(AnalysisError::EmptyRange)
        );
        assert_eq!(
            minimal_stabilizing_n(&p, rule, &[2, 1], d, &setup),
            Err(AnalysisError::UnorderedRange)
        );
    }
}
