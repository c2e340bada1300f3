//! Seeded property suites: interpolation inequalities, the discrete energy
//! balance, and solver-vs-closed-form checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::verify_decay_bound;
use crate::dynamics::{
    check_conditions, simulate, simulate_full, ClosedLoopParams, InitialCondition, Scheme,
    SimConfig,
};
use crate::field::{Field, Grid1D, SpectralOps};
use crate::interpolants::{defect, gamma_sq, observe, InterpolantSpec};
use crate::oracle::{analytic_linear_mode, empirical_bh_constant, logistic_constant_state, TrialEnsemble};

pub const SUITES: [&str; 4] = ["interpolation", "energy", "oracle", "all"];
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown suite {0:?}; expected one of interpolation, energy, oracle, all")]
pub struct UnknownSuite(pub String);

/// Outcome of one property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    /// Largest observed `lhs / rhs` (or error / tolerance); the property holds
    /// when this is at most 1.
    pub worst_ratio: f64,
    pub trials: usize,
    /// Reported for information only; does not affect `passed` of the suite.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub informational: bool,
}

impl PropertyResult {
    fn ratio(name: impl Into<String>, worst_ratio: f64, trials: usize) -> Self {
        PropertyResult {
            name: name.into(),
            passed: worst_ratio <= 1.0,
            worst_ratio,
            trials,
            informational: false,
        }
    }

    fn info(mut self) -> Self {
        self.informational = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub properties: Vec<PropertyResult>,
}

impl SuiteReport {
    fn new(suite: &str, seed: u64, properties: Vec<PropertyResult>) -> Self {
        let passed = properties.iter().all(|p| p.passed || p.informational);
        SuiteReport {
            suite: suite.to_string(),
            seed,
            passed,
            properties,
        }
    }

    pub fn property(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }
}

pub fn run_suite(name: &str, seed: u64) -> Result<SuiteReport, UnknownSuite> {
    match name {
        "interpolation" => Ok(interpolation_suite(seed, 200)),
        "energy" => Ok(energy_suite(seed)),
        "oracle" => Ok(oracle_suite(seed)),
        "all" => {
            let mut props = Vec::new();
            for s in ["interpolation", "energy", "oracle"] {
                for mut p in run_suite(s, seed)?.properties {
                    p.name = format!("{s}/{}", p.name);
                    props.push(p);
                }
            }
            Ok(SuiteReport::new("all", seed, props))
        }
        other => Err(UnknownSuite(other.to_string())),
    }
}

const RANKS: [usize; 3] = [4, 8, 16];
const KMAX: usize = 20;
const RESOLUTION: usize = 256;

/// Interpolation inequalities over `trials` random functions with modes up to 20,
/// for ranks 4, 8 and 16.
pub fn interpolation_suite(seed: u64, trials: usize) -> SuiteReport {
    let l = 1.0;
    let neumann = Grid1D::neumann(l, RESOLUTION).expect("valid grid");
    let periodic = Grid1D::periodic(l, RESOLUTION).expect("valid grid");
    let ens = TrialEnsemble::new(seed, trials, KMAX).expect("trials >= 1");
    let pi = std::f64::consts::PI;

    let mut worst = [0.0f64; 7];
    let mut count = 0;
    for &n in &RANKS {
        let h = l / n as f64;
        let volume = InterpolantSpec::volume(l, n).expect("valid rank");
        let nodal = InterpolantSpec::nodal(l, n).expect("valid rank");
        let fourier = InterpolantSpec::fourier(l, n, true).expect("valid rank");
        // observation and actuation points near opposite ends of each cell
        let obs: Vec<f64> = (0..n).map(|k| (k as f64 + 0.9) * h).collect();
        let act: Vec<f64> = (0..n).map(|k| (k as f64 + 0.1) * h).collect();
        let delta = InterpolantSpec::delta(l, n)
            .and_then(|s| s.with_obs_points(obs.clone()))
            .and_then(|s| s.with_act_points(act.clone()))
            .expect("points inside cells");

        for i in 0..trials {
            count += 1;
            let phi = ens.field(i, &neumann).expect("band limit");
            let gx = phi.dx_norm();
            let l2 = phi.l2_norm();
            let mut upd = |slot: usize, lhs: f64, rhs: f64| {
                let r = if rhs > 0.0 {
                    lhs / rhs
                } else if lhs <= 1e-13 {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst[slot] = worst[slot].max(r);
            };
            upd(0, defect(&phi, &volume).expect("valid"), h * gx);
            upd(1, defect(&phi, &nodal).expect("valid"), h * gx);
            upd(2, defect(&phi, &fourier).expect("valid"), h * gx / pi);
            let g2 = gamma_sq(&observe(&phi, &volume).expect("valid"));
            upd(3, l2 * l2, h * g2 + (h / pi).powi(2) * gx * gx);
            upd(4, l2 * l2, h * g2 + (h / (2.0 * pi)).powi(2) * gx * gx);

            let psi = ens.field(i, &periodic).expect("band limit");
            let ops = SpectralOps::new(periodic);
            let c = ops.analyze(psi.samples());
            let gx = psi.dx_norm();
            let l2 = psi.l2_norm();
            let jump: f64 = obs
                .iter()
                .zip(&act)
                .map(|(&a, &b)| (ops.eval(&c, a) - ops.eval(&c, b)).powi(2))
                .sum();
            upd(5, jump, h * gx * gx);
            let nodal_sq = gamma_sq(&observe(&psi, &delta).expect("valid"));
            upd(6, l2 * l2, 2.0 * (h * nodal_sq + h * h * gx * gx));
        }
    }
    let props = vec![
        PropertyResult::ratio("volume_defect", worst[0], count),
        PropertyResult::ratio("nodal_defect", worst[1], count),
        PropertyResult::ratio("fourier_defect", worst[2], count),
        PropertyResult::ratio("volume_poincare_sharp", worst[3], count),
        PropertyResult::ratio("volume_poincare_half_width", worst[4], count).info(),
        PropertyResult::ratio("node_displacement", worst[5], count),
        PropertyResult::ratio("nodal_l2_bound", worst[6], count),
    ];
    SuiteReport::new("interpolation", seed, props)
}

/// Residual of the discrete energy balance and the decay bounds on the
/// Fourier-projection and delta-actuated closed loops.
pub fn energy_suite(seed: u64) -> SuiteReport {
    let mut props = Vec::new();
    // the point actuators excite a fast transient that needs a finer step
    let runs: [(&str, ClosedLoopParams, Grid1D, f64, f64); 2] = [
        (
            "fourier",
            ClosedLoopParams::new(
                1.0,
                4.0,
                1.0,
                10.0,
                Some(InterpolantSpec::fourier(1.0, 2, true).expect("valid")),
            )
            .expect("valid"),
            Grid1D::neumann(1.0, 64).expect("valid"),
            1.0,
            1e-4,
        ),
        (
            "delta",
            ClosedLoopParams::new(
                1.0,
                1.0,
                1.0,
                4.5,
                Some(InterpolantSpec::delta(1.0, 4).expect("valid")),
            )
            .expect("valid"),
            Grid1D::periodic(1.0, 64).expect("valid"),
            0.25,
            2e-5,
        ),
    ];
    for (name, p, grid, rate, dt) in runs {
        let cfg = SimConfig {
            dt,
            t_final: 2.0,
            record_every: 10,
            ic: InitialCondition::RandomBand {
                seed,
                kmax: 4,
                amplitude: 1.0,
            },
            grid,
            scheme: Scheme::EtdRk2,
        };
        let (residual, bound, n) = match simulate(&cfg, &p) {
            Ok(rec) => {
                let scale = rec.h1.iter().fold(1.0f64, |a, &v| a.max(v * v));
                let worst = rec.energy_residual.iter().fold(0.0f64, |a, &v| a.max(v));
                (worst / (1e-3 * scale), verify_decay_bound(&rec, rate, 0.05), rec.len())
            }
            Err(_) => (f64::INFINITY, false, 0),
        };
        let holds = match name {
            "fourier" => check_conditions(&p).interpolant_decay.holds,
            _ => check_conditions(&p).delta_decay.holds,
        };
        props.push(PropertyResult::ratio(format!("{name}_energy_residual"), residual, n));
        props.push(PropertyResult {
            name: format!("{name}_decay_bound"),
            passed: bound && holds,
            worst_ratio: if bound { 0.0 } else { f64::INFINITY },
            trials: n,
            informational: false,
        });
    }
    SuiteReport::new("energy", seed, props)
}

/// Solver against closed forms, and empirical interpolation constants
/// against their certified values on 50 seeds.
pub fn oracle_suite(seed: u64) -> SuiteReport {
    let mut props = Vec::new();

    // constant state against the logistic solution
    let (alpha, c0, l) = (1.0, 0.1, 1.0);
    let p = ClosedLoopParams::open_loop(1.0, alpha, l).expect("valid");
    let cfg = SimConfig {
        dt: 1e-4,
        t_final: 10.0,
        record_every: 1000,
        ic: InitialCondition::Constant { value: c0 },
        grid: Grid1D::neumann(l, 16).expect("valid"),
        scheme: Scheme::EtdRk2,
    };
    let worst = match simulate(&cfg, &p) {
        Ok(rec) => rec
            .times
            .iter()
            .zip(&rec.l2)
            .map(|(&t, &v)| {
                let exact = logistic_constant_state(c0, t, &p);
                (v / l.sqrt() - exact).abs() / exact.abs() / 1e-6
            })
            .fold(0.0, f64::max),
        Err(_) => f64::INFINITY,
    };
    props.push(PropertyResult::ratio("logistic_constant_state", worst, cfg.steps()));

    // small single mode against the linearization
    let (nu, alpha, l, k, amp) = (1.0, 4.0, std::f64::consts::PI, 1usize, 1e-6);
    let p = ClosedLoopParams::open_loop(nu, alpha, l).expect("valid");
    let grid = Grid1D::neumann(l, 64).expect("valid");
    let mut worst = 0.0f64;
    for t_final in [0.25, 0.5, 1.0] {
        let cfg = SimConfig {
            dt: 1e-4,
            t_final,
            record_every: 1000,
            ic: InitialCondition::SingleMode { k, amplitude: amp },
            grid,
            scheme: Scheme::EtdRk2,
        };
        worst = worst.max(match simulate_full(&cfg, &p) {
            Ok(out) => {
                let exact = analytic_linear_mode(k, amp, t_final, &p, &grid);
                relative_error(&out.final_state, &exact) / 1e-4
            }
            Err(_) => f64::INFINITY,
        });
    }
    props.push(PropertyResult::ratio("linear_mode", worst, 3));

    // empirical constants
    let grid = Grid1D::neumann(1.0, RESOLUTION).expect("valid");
    for (name, spec) in [
        ("volume_constant", InterpolantSpec::volume(1.0, 8).expect("valid")),
        ("nodal_constant", InterpolantSpec::nodal(1.0, 8).expect("valid")),
        ("fourier_constant", InterpolantSpec::fourier(1.0, 8, true).expect("valid")),
    ] {
        let c = spec.certified_constant().expect("certified");
        let mut worst = 0.0f64;
        for s in 0..50u64 {
            let ens = TrialEnsemble::new(seed.wrapping_add(s), 16, KMAX).expect("valid");
            let r = empirical_bh_constant(&spec, &ens, &grid).map_or(f64::INFINITY, |e| e.ratio);
            worst = worst.max(r / (c + 1e-6));
        }
        props.push(PropertyResult::ratio(name, worst, 50));
    }
    SuiteReport::new("oracle", seed, props)
}

fn relative_error(a: &Field, b: &Field) -> f64 {
    let diff = a.axpy(-1.0, b).expect("same grid");
    diff.l2_norm() / b.l2_norm()
}
