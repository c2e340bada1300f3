//! Time integration of the open and closed loop
//!
//! ```text
//! u_t = nu u_xx + alpha u - u^3 - mu C(u)
//! ```
//!
//! where `C = I_h` (Neumann boundary) or the delta-actuated nodal feedback
//! `h sum_k u(xbar_k) delta(x - x_k)` (periodic boundary). Diffusion is
//! integrated exactly per mode; reaction and control are treated explicitly
//! with first-order exponential time differencing (ETD1) or the two-stage
//! Cox-Matthews scheme (ETD-RK2). The cubic term is evaluated on a twice
//! refined grid and projected back, which makes the discrete energy balance
//! match the refined `int u^4` exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{pad_coeffs, Boundary, Field, FieldError, Grid1D, SpectralOps};
use crate::interpolants::{
    gamma_sq, Controller, InterpolantError, InterpolantKind, InterpolantSpec, Observations,
};
use crate::oracle::random_band_coefficients;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("{kind} feedback needs a {required} grid, got {got}")]
    BoundaryMismatch {
        kind: InterpolantKind,
        required: Boundary,
        got: Boundary,
    },
    #[error("time step {dt} exceeds the explicit stability limit {limit} at t = {t}")]
    StepTooLarge { t: f64, dt: f64, limit: f64 },
    #[error("integration blew up at t = {t}")]
    BlowUp { t: f64 },
    #[error(transparent)]
    Interpolant(#[from] InterpolantError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> DynamicsError {
    DynamicsError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// `(nu, alpha, L, mu)` and the feedback interpolant (`None` = open loop).
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopParams<T: Scalar = f64> {
    pub nu: T,
    pub alpha: T,
    pub length: T,
    pub mu: T,
    pub control: Option<InterpolantSpec<T>>,
}

impl<T: Scalar> ClosedLoopParams<T> {
    pub fn new(
        nu: T,
        alpha: T,
        length: T,
        mu: T,
        control: Option<InterpolantSpec<T>>,
    ) -> Result<Self, DynamicsError> {
        let p = ClosedLoopParams {
            nu,
            alpha,
            length,
            mu,
            control,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn open_loop(nu: T, alpha: T, length: T) -> Result<Self, DynamicsError> {
        Self::new(nu, alpha, length, T::zero(), None)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let pos = |name, v: T| {
            if v.is_finite() && v > T::zero() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be > 0, got {v}")))
            }
        };
        pos("nu", self.nu)?;
        pos("alpha", self.alpha)?;
        pos("length", self.length)?;
        if !(self.mu.is_finite() && self.mu >= T::zero()) {
            return Err(invalid("mu", format!("must be >= 0, got {}", self.mu)));
        }
        if let Some(spec) = &self.control {
            let tol = T::lit(1e-12) * self.length;
            if (spec.length() - self.length).abs() > tol {
                return Err(invalid(
                    "control",
                    format!("interpolant length {} != L = {}", spec.length(), self.length),
                ));
            }
        }
        Ok(())
    }

    /// True when no feedback acts on the state.
    pub fn is_open_loop(&self) -> bool {
        self.control.is_none() || self.mu == T::zero()
    }
}

/// Time integration scheme for the explicit part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Etd1,
    EtdRk2,
}

/// Named initial-condition presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `amplitude * cos(k pi x / L)` (Neumann) or `amplitude * cos(2 pi k x / L)` (periodic).
    SingleMode { k: usize, amplitude: f64 },
    /// Seeded random cosine sum with coefficients `U[-1, 1] / (k + 1)`,
    /// `k <= kmax`, rescaled so that `||u0||_{L^2} = amplitude`.
    RandomBand { seed: u64, kmax: usize, amplitude: f64 },
    Constant { value: f64 },
}

impl InitialCondition {
    pub fn field<T: Scalar>(&self, grid: &Grid1D<T>) -> Result<Field<T>, DynamicsError> {
        let m = grid.resolution();
        let band_limit = m / 8;
        let check_k = |k: usize| {
            if k > band_limit {
                Err(invalid("ic", format!("mode {k} exceeds the band limit M/8 = {band_limit}")))
            } else {
                Ok(())
            }
        };
        let mut coeffs = vec![T::zero(); m];
        match *self {
            InitialCondition::Constant { value } => {
                if !value.is_finite() {
                    return Err(invalid("ic", "constant must be finite"));
                }
                coeffs[0] = T::lit(value);
            }
            InitialCondition::SingleMode { k, amplitude } => {
                check_k(k)?;
                let idx = match grid.boundary() {
                    Boundary::Neumann => k,
                    Boundary::Periodic if k == 0 => 0,
                    Boundary::Periodic => 2 * k - 1,
                };
                coeffs[idx] = T::lit(amplitude);
            }
            InitialCondition::RandomBand {
                seed,
                kmax,
                amplitude,
            } => {
                check_k(kmax)?;
                if !(amplitude.is_finite() && amplitude >= 0.0) {
                    return Err(invalid("ic", "amplitude must be finite and >= 0"));
                }
                let raw = random_band_coefficients(seed, 0, kmax, grid.boundary());
                for (i, &c) in raw.iter().enumerate() {
                    coeffs[i] = T::lit(c);
                }
                let ops = SpectralOps::new(*grid);
                let norm = ops.l2_sq(&coeffs).sqrt();
                if norm > T::zero() {
                    let s = T::lit(amplitude) / norm;
                    coeffs.iter_mut().for_each(|c| *c = *c * s);
                }
            }
        }
        Ok(Field::new(*grid, SpectralOps::new(*grid).synthesize(&coeffs))?)
    }
}

/// Run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<T: Scalar = f64> {
    pub dt: T,
    pub t_final: T,
    pub record_every: usize,
    pub ic: InitialCondition,
    pub grid: Grid1D<T>,
    pub scheme: Scheme,
}

impl<T: Scalar> SimConfig<T> {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.dt.is_finite() && self.dt > T::zero()) {
            return Err(invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final > self.dt) {
            return Err(invalid("t_final", format!("must exceed dt, got {}", self.t_final)));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "must be >= 1"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round().to_usize().unwrap_or(0).max(1)
    }
}

/// Recorded norms and energy-balance terms of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord<T: Scalar = f64> {
    pub times: Vec<T>,
    /// `||u||_{L^2}`
    pub l2: Vec<T>,
    /// `||u_x||_{L^2}`
    pub h1x: Vec<T>,
    /// `||u||_{H^1}`
    pub h1: Vec<T>,
    /// `int u^4`
    pub l4p4: Vec<T>,
    /// `sum_k obs_k^2`
    pub gamma2: Vec<T>,
    /// `||I_h u||_{L^2}`
    pub ih_l2: Vec<T>,
    /// `<C(u), u>`, the control term of the energy balance
    pub pairing: Vec<T>,
    pub energy_residual: Vec<T>,
}

impl<T: Scalar> TrajectoryRecord<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn l2_sq(&self) -> impl Iterator<Item = T> + '_ {
        self.l2.iter().map(|&v| v * v)
    }

    pub fn final_time(&self) -> Option<T> {
        self.times.last().copied()
    }

    /// Fills `energy_residual` with
    /// `|1/2 d/dt ||u||^2 + nu ||u_x||^2 - alpha ||u||^2 + int u^4 + mu <C(u), u>|`,
    /// differentiating the recorded `||u||^2` with three-point stencils
    /// (centered inside, one-sided at the ends).
    pub fn compute_energy_residual(&mut self, p: &ClosedLoopParams<T>) {
        let e: Vec<T> = self.l2_sq().collect();
        let rate = differentiate(&self.times, &e);
        self.fill_residual(p, &rate);
    }

    fn fill_residual(&mut self, p: &ClosedLoopParams<T>, rate: &[T]) {
        let half = T::lit(0.5);
        self.energy_residual = (0..self.len())
            .map(|i| {
                let e = self.l2[i] * self.l2[i];
                let r = half * rate[i] + p.nu * self.h1x[i] * self.h1x[i] - p.alpha * e
                    + self.l4p4[i]
                    + p.mu * self.pairing[i];
                r.abs()
            })
            .collect();
    }
}

/// `d/dt ||u||^2` at the recorded steps, from the energy of every step.
fn step_energy_rate<T: Scalar>(energy: &[T], recorded: &[usize], dt: T) -> Vec<T> {
    let n = energy.len();
    recorded
        .iter()
        .map(|&s| {
            if n < 3 {
                return if n == 2 {
                    (energy[1] - energy[0]) / dt
                } else {
                    T::zero()
                };
            }
            let c = s.clamp(1, n - 2);
            let at = T::from_usize_exact(s) * dt;
            let x = [c - 1, c, c + 1].map(|i| T::from_usize_exact(i) * dt);
            lagrange3_derivative(x, [energy[c - 1], energy[c], energy[c + 1]], at)
        })
        .collect()
}

/// Derivative of samples `f(t_i)` on a possibly non-uniform grid.
pub fn differentiate<T: Scalar>(t: &[T], f: &[T]) -> Vec<T> {
    let n = t.len();
    match n {
        0 => Vec::new(),
        1 => vec![T::zero()],
        2 => {
            let s = (f[1] - f[0]) / (t[1] - t[0]);
            vec![s, s]
        }
        _ => (0..n)
            .map(|i| {
                let c = i.clamp(1, n - 2);
                lagrange3_derivative(
                    [t[c - 1], t[c], t[c + 1]],
                    [f[c - 1], f[c], f[c + 1]],
                    t[i],
                )
            })
            .collect(),
    }
}

fn lagrange3_derivative<T: Scalar>(x: [T; 3], f: [T; 3], at: T) -> T {
    let [x0, x1, x2] = x;
    let d0 = ((at - x1) + (at - x2)) / ((x0 - x1) * (x0 - x2));
    let d1 = ((at - x0) + (at - x2)) / ((x1 - x0) * (x1 - x2));
    let d2 = ((at - x0) + (at - x1)) / ((x2 - x0) * (x2 - x1));
    f[0] * d0 + f[1] * d1 + f[2] * d2
}

/// A closed loop bound to a grid with transforms and controller tables
/// prepared once.
#[derive(Debug, Clone)]
pub struct ClosedLoop<T: Scalar = f64> {
    params: ClosedLoopParams<T>,
    grid: Grid1D<T>,
    ops: SpectralOps<T>,
    fine: SpectralOps<T>,
    controller: Option<Controller<T>>,
    // -nu kappa_i^2
    diffusion: Vec<T>,
}

/// Per-step diagnostics of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateMetrics<T: Scalar = f64> {
    pub l2: T,
    pub h1x: T,
    pub h1: T,
    pub l4p4: T,
    pub gamma2: T,
    pub ih_l2: T,
    pub pairing: T,
    pub max_abs: T,
}

impl<T: Scalar> ClosedLoop<T> {
    pub fn new(params: ClosedLoopParams<T>, grid: Grid1D<T>) -> Result<Self, DynamicsError> {
        params.validate()?;
        let tol = T::lit(1e-12) * params.length;
        if (grid.length() - params.length).abs() > tol {
            return Err(invalid(
                "length",
                format!("grid length {} != L = {}", grid.length(), params.length),
            ));
        }
        let controller = match &params.control {
            Some(spec) => {
                let required = spec.kind().boundary();
                if grid.boundary() != required {
                    return Err(DynamicsError::BoundaryMismatch {
                        kind: spec.kind(),
                        required,
                        got: grid.boundary(),
                    });
                }
                Some(Controller::new(spec.clone(), grid)?)
            }
            None => None,
        };
        let diffusion = (0..grid.resolution())
            .map(|i| {
                let k = grid.wavenumber(i);
                -params.nu * k * k
            })
            .collect();
        Ok(ClosedLoop {
            ops: SpectralOps::new(grid),
            fine: SpectralOps::new(grid.refined(2)),
            params,
            grid,
            controller,
            diffusion,
        })
    }

    pub fn params(&self) -> &ClosedLoopParams<T> {
        &self.params
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    pub fn ops(&self) -> &SpectralOps<T> {
        &self.ops
    }

    /// Modal coefficients of a state, with the periodic Nyquist mode removed.
    pub fn state_coeffs(&self, u: &Field<T>) -> Vec<T> {
        let mut c = self.ops.analyze(u.samples());
        self.drop_nyquist(&mut c);
        c
    }

    fn drop_nyquist(&self, c: &mut [T]) {
        if self.grid.boundary() == Boundary::Periodic {
            let m = c.len();
            c[m - 1] = T::zero();
        }
    }

    fn observe(&self, samples: &[T], coeffs: &[T]) -> Option<Observations<T>> {
        self.controller.as_ref().map(|c| c.observe(samples, coeffs))
    }

    /// Modal coefficients of the explicit part `alpha u - u^3 - mu C(u)`.
    fn explicit_coeffs(&self, coeffs: &[T], samples: &[T]) -> Vec<T> {
        let m = self.grid.resolution();
        let fine_u = self.fine.synthesize(&pad_coeffs(coeffs, 2 * m));
        let cube: Vec<T> = fine_u.iter().map(|&v| v * v * v).collect();
        let cube_c = self.fine.analyze(&cube);
        let mut out: Vec<T> = (0..m)
            .map(|i| self.params.alpha * coeffs[i] - cube_c[i])
            .collect();
        if let (Some(ctl), true) = (&self.controller, self.params.mu > T::zero()) {
            let obs = ctl.observe(samples, coeffs);
            let ctrl = self.ops.analyze(&ctl.control_samples(&obs, &self.ops));
            for (o, c) in out.iter_mut().zip(ctrl) {
                *o = *o - self.params.mu * c;
            }
        }
        self.drop_nyquist(&mut out);
        out
    }

    /// Right-hand side `nu u_xx + alpha u - u^3 - mu C(u)` as samples.
    pub fn rhs(&self, u: &Field<T>) -> Result<Field<T>, DynamicsError> {
        check_grid(&self.grid, u.grid())?;
        let c = self.state_coeffs(u);
        let samples = self.ops.synthesize(&c);
        let mut total = self.explicit_coeffs(&c, &samples);
        for ((t, &ci), &d) in total.iter_mut().zip(&c).zip(&self.diffusion) {
            *t = *t + d * ci;
        }
        Ok(Field::new(self.grid, self.ops.synthesize(&total))?)
    }

    /// `0.5 / (alpha + 3 max|u|^2 + mu)`.
    pub fn stability_limit(&self, max_abs: T) -> T {
        T::lit(0.5) / (self.params.alpha + T::lit(3.0) * max_abs * max_abs + self.params.mu)
    }

    pub fn stepper(&self, dt: T, scheme: Scheme) -> Stepper<T> {
        Stepper::new(self, dt, scheme)
    }

    /// Advances one step of size `dt`.
    pub fn step(&self, u: &Field<T>, dt: T, scheme: Scheme) -> Result<Field<T>, DynamicsError> {
        check_grid(&self.grid, u.grid())?;
        let stepper = self.stepper(dt, scheme);
        let c = self.state_coeffs(u);
        let c = stepper.advance(self, &c, T::zero())?;
        Ok(Field::from_raw(self.grid, self.ops.synthesize(&c)))
    }

    /// Norms and control terms of the state with coefficients `coeffs`.
    pub fn metrics(&self, coeffs: &[T]) -> StateMetrics<T> {
        let samples = self.ops.synthesize(coeffs);
        self.metrics_with_samples(coeffs, &samples)
    }

    fn metrics_with_samples(&self, coeffs: &[T], samples: &[T]) -> StateMetrics<T> {
        let m = self.grid.resolution();
        let l = self.grid.length();
        let l2_sq = self.ops.l2_sq(coeffs);
        let h1x_sq = self.ops.dx_l2_sq(coeffs);
        let fine_u = self.fine.synthesize(&pad_coeffs(coeffs, 2 * m));
        let l4p4 = fine_u.iter().fold(T::zero(), |a, &v| a + v * v * v * v) * self.fine.grid().dx();
        let (gamma2, ih_l2, pairing) = match (&self.controller, self.observe(samples, coeffs)) {
            (Some(ctl), Some(obs)) => {
                let ctrl = ctl.control_samples(&obs, &self.ops);
                let mut ctrl_c = self.ops.analyze(&ctrl);
                self.drop_nyquist(&mut ctrl_c);
                let pairing = ctrl_c
                    .iter()
                    .zip(coeffs)
                    .enumerate()
                    .fold(T::zero(), |a, (i, (&x, &y))| a + self.grid.basis_weight(i) * x * y);
                (gamma_sq(&obs), ctl.interpolant_l2(&obs), pairing)
            }
            _ => (T::zero(), T::zero(), T::zero()),
        };
        StateMetrics {
            l2: l2_sq.sqrt(),
            h1x: h1x_sq.sqrt(),
            h1: (l2_sq / (l * l) + h1x_sq).sqrt(),
            l4p4,
            gamma2,
            ih_l2,
            pairing,
            max_abs: samples.iter().fold(T::zero(), |a, v| a.max(v.abs())),
        }
    }
}

fn check_grid<T: Scalar>(expected: &Grid1D<T>, got: &Grid1D<T>) -> Result<(), DynamicsError> {
    if expected != got {
        return Err(FieldError::GridMismatch.into());
    }
    Ok(())
}

/// `phi_1(z) = (e^z - 1) / z` and `phi_2(z) = (e^z - 1 - z) / z^2`.
pub fn phi_functions<T: Scalar>(z: T) -> (T, T) {
    if z.abs() < T::lit(1e-2) {
        // Taylor series through z^5; truncation error below 1e-16
        let mut p1 = T::zero();
        let mut p2 = T::zero();
        let mut term = T::one();
        for n in 0..7usize {
            // term = z^n / n!
            let n1 = T::from_usize_exact(n + 1);
            let n2 = T::from_usize_exact(n + 2);
            p1 = p1 + term / n1;
            p2 = p2 + term / (n1 * n2);
            term = term * z / n1;
        }
        (p1, p2)
    } else {
        let em1 = z.exp_m1();
        (em1 / z, (em1 - z) / (z * z))
    }
}

/// Precomputed exponential factors for one time step size.
#[derive(Debug, Clone)]
pub struct Stepper<T: Scalar = f64> {
    dt: T,
    scheme: Scheme,
    decay: Vec<T>,
    dt_phi1: Vec<T>,
    dt_phi2: Vec<T>,
}

impl<T: Scalar> Stepper<T> {
    fn new(system: &ClosedLoop<T>, dt: T, scheme: Scheme) -> Self {
        let mut decay = Vec::with_capacity(system.diffusion.len());
        let mut dt_phi1 = Vec::with_capacity(system.diffusion.len());
        let mut dt_phi2 = Vec::with_capacity(system.diffusion.len());
        for &lam in &system.diffusion {
            let z = lam * dt;
            let (p1, p2) = phi_functions(z);
            decay.push(z.exp());
            dt_phi1.push(dt * p1);
            dt_phi2.push(dt * p2);
        }
        Stepper {
            dt,
            scheme,
            decay,
            dt_phi1,
            dt_phi2,
        }
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// One step from modal coefficients `c` at time `t`.
    pub fn advance(&self, system: &ClosedLoop<T>, c: &[T], t: T) -> Result<Vec<T>, DynamicsError> {
        let samples = system.ops.synthesize(c);
        let max_abs = samples.iter().fold(T::zero(), |a, v| a.max(v.abs()));
        if !max_abs.is_finite() {
            return Err(DynamicsError::BlowUp { t: t.to_f64_lossy() });
        }
        let limit = system.stability_limit(max_abs);
        if self.dt > limit {
            return Err(DynamicsError::StepTooLarge {
                t: t.to_f64_lossy(),
                dt: self.dt.to_f64_lossy(),
                limit: limit.to_f64_lossy(),
            });
        }
        let n0 = system.explicit_coeffs(c, &samples);
        let a: Vec<T> = (0..c.len())
            .map(|i| self.decay[i] * c[i] + self.dt_phi1[i] * n0[i])
            .collect();
        let next = match self.scheme {
            Scheme::Etd1 => a,
            Scheme::EtdRk2 => {
                let a_samples = system.ops.synthesize(&a);
                let n1 = system.explicit_coeffs(&a, &a_samples);
                (0..c.len())
                    .map(|i| a[i] + self.dt_phi2[i] * (n1[i] - n0[i]))
                    .collect()
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::BlowUp {
                t: (t + self.dt).to_f64_lossy(),
            });
        }
        Ok(next)
    }
}

/// Right-hand side of the closed loop at `u`.
pub fn rhs<T: Scalar>(u: &Field<T>, p: &ClosedLoopParams<T>) -> Result<Field<T>, DynamicsError> {
    ClosedLoop::new(p.clone(), *u.grid())?.rhs(u)
}

/// One integration step.
pub fn step<T: Scalar>(
    u: &Field<T>,
    p: &ClosedLoopParams<T>,
    dt: T,
    scheme: Scheme,
) -> Result<Field<T>, DynamicsError> {
    ClosedLoop::new(p.clone(), *u.grid())?.step(u, dt, scheme)
}

/// A failed run: the error and everything recorded before it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error}")]
pub struct SimulationFailure<T: Scalar = f64> {
    pub error: DynamicsError,
    pub partial: TrajectoryRecord<T>,
}

/// Final state and recorded series of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput<T: Scalar = f64> {
    pub record: TrajectoryRecord<T>,
    pub final_state: Field<T>,
}

/// Integrates from the configured initial condition to `t_final`.
pub fn simulate<T: Scalar>(
    cfg: &SimConfig<T>,
    p: &ClosedLoopParams<T>,
) -> Result<TrajectoryRecord<T>, SimulationFailure<T>> {
    simulate_full(cfg, p).map(|out| out.record)
}

/// Like [`simulate`] but also returns the terminal state.
pub fn simulate_full<T: Scalar>(
    cfg: &SimConfig<T>,
    p: &ClosedLoopParams<T>,
) -> Result<SimulationOutput<T>, SimulationFailure<T>> {
    let fail = |error: DynamicsError| SimulationFailure {
        error,
        partial: TrajectoryRecord::default(),
    };
    cfg.validate().map_err(fail)?;
    let system = ClosedLoop::new(p.clone(), cfg.grid).map_err(fail)?;
    let u0 = cfg.ic.field(&cfg.grid).map_err(fail)?;
    let stepper = system.stepper(cfg.dt, cfg.scheme);
    let steps = cfg.steps();

    let mut record = TrajectoryRecord::default();
    let push = |record: &mut TrajectoryRecord<T>, t: T, c: &[T]| {
        let m = system.metrics(c);
        record.times.push(t);
        record.l2.push(m.l2);
        record.h1x.push(m.h1x);
        record.h1.push(m.h1);
        record.l4p4.push(m.l4p4);
        record.gamma2.push(m.gamma2);
        record.ih_l2.push(m.ih_l2);
        record.pairing.push(m.pairing);
    };

    // the balance is checked against the energy of every step, so that the
    // derivative estimate does not depend on the recording stride
    let mut c = system.state_coeffs(&u0);
    let mut energy = vec![system.ops.l2_sq(&c)];
    let mut recorded = vec![0];
    push(&mut record, T::zero(), &c);
    for n in 0..steps {
        let t = T::from_usize_exact(n) * cfg.dt;
        match stepper.advance(&system, &c, t) {
            Ok(next) => c = next,
            Err(error) => {
                let rate = step_energy_rate(&energy, &recorded, cfg.dt);
                record.fill_residual(p, &rate);
                return Err(SimulationFailure {
                    error,
                    partial: record,
                });
            }
        }
        energy.push(system.ops.l2_sq(&c));
        let done = n + 1;
        if done % cfg.record_every == 0 || done == steps {
            recorded.push(done);
            push(&mut record, T::from_usize_exact(done) * cfg.dt, &c);
        }
    }
    let rate = step_energy_rate(&energy, &recorded, cfg.dt);
    record.fill_residual(p, &rate);
    Ok(SimulationOutput {
        record,
        final_state: Field::from_raw(cfg.grid, system.ops.synthesize(&c)),
    })
}

/// Whether one theorem's hypotheses hold, with the decay exponent it predicts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub applies: bool,
    pub holds: bool,
    /// Predicted exponent `lambda` in `||u(t)||^2 <= e^{-lambda t} ||u(0)||^2`.
    pub exponent: Option<f64>,
}

impl TheoremCheck {
    fn not_applicable() -> Self {
        TheoremCheck {
            applies: false,
            holds: false,
            exponent: None,
        }
    }
}

/// Hypothesis report for the stabilization theorems at given parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub open_loop: bool,
    pub kind: Option<InterpolantKind>,
    pub rank: Option<usize>,
    pub h: Option<f64>,
    pub certified_c: Option<f64>,
    /// `nu >= mu c^2 h^2`: global existence and absorbing balls.
    pub existence: TheoremCheck,
    /// existence condition plus `r = mu - 2 alpha - nu / L^2 > 0`.
    pub interpolant_decay: TheoremCheck,
    /// Volume elements, as used in the decay proof: `mu h >= nu` and
    /// `nu > alpha h^2 / (4 pi^2)`.
    pub volume_decay: TheoremCheck,
    /// Volume elements, hypothesis as printed: `mu >= nu > (h / 2 pi)^2 max(alpha, mu)`.
    pub volume_decay_printed: TheoremCheck,
    /// Delta-actuated nodes: `mu > 4 alpha` and `nu >= 2 mu h^2`.
    pub delta_decay: TheoremCheck,
    /// `r = mu - (2 alpha + nu / L^2)`
    pub r: f64,
}

/// Evaluates the hypotheses of each stabilization theorem for `p`.
pub fn check_conditions<T: Scalar>(p: &ClosedLoopParams<T>) -> ConditionReport {
    let nu = p.nu.to_f64_lossy();
    let alpha = p.alpha.to_f64_lossy();
    let l = p.length.to_f64_lossy();
    let mu = p.mu.to_f64_lossy();
    let r = mu - (2.0 * alpha + nu / (l * l));
    let open_loop = p.is_open_loop();
    let spec = p.control.as_ref();
    let kind = spec.map(|s| s.kind());
    let rank = spec.map(|s| s.rank());
    let h = spec.map(|s| s.h().to_f64_lossy());
    let certified_c = spec.and_then(|s| s.certified_constant()).map(|c| c.to_f64_lossy());

    let mut report = ConditionReport {
        open_loop,
        kind,
        rank,
        h,
        certified_c,
        existence: TheoremCheck::not_applicable(),
        interpolant_decay: TheoremCheck::not_applicable(),
        volume_decay: TheoremCheck::not_applicable(),
        volume_decay_printed: TheoremCheck::not_applicable(),
        delta_decay: TheoremCheck::not_applicable(),
        r,
    };
    let (Some(kind), Some(h), Some(n)) = (kind, h, rank) else {
        return report;
    };
    let closed = !open_loop;
    if kind != InterpolantKind::DeltaNodal {
        let existence = certified_c.is_some_and(|c| closed && nu >= mu * c * c * h * h);
        report.existence = TheoremCheck {
            applies: true,
            holds: existence,
            exponent: None,
        };
        report.interpolant_decay = TheoremCheck {
            applies: true,
            holds: existence && r > 0.0,
            exponent: Some(r),
        };
    }
    if kind == InterpolantKind::VolumeAverages {
        let two_pi = 2.0 * std::f64::consts::PI;
        let exponent = nu * (two_pi * n as f64 / l).powi(2) - alpha;
        report.volume_decay = TheoremCheck {
            applies: true,
            holds: closed && mu * h >= nu && nu > alpha * h * h / (two_pi * two_pi),
            exponent: Some(exponent),
        };
        let poincare = (h / two_pi).powi(2);
        report.volume_decay_printed = TheoremCheck {
            applies: true,
            holds: closed && mu >= nu && nu > poincare * alpha.max(mu),
            exponent: Some(exponent),
        };
    }
    if kind == InterpolantKind::DeltaNodal {
        report.delta_decay = TheoremCheck {
            applies: true,
            holds: closed && mu > 4.0 * alpha && nu >= 2.0 * mu * h * h,
            exponent: Some(2.0 * (mu / 4.0 - alpha)),
        };
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn neumann(l: f64, m: usize) -> Grid1D {
        Grid1D::neumann(l, m).unwrap()
    }

    #[test]
    fn zero_is_a_steady_state() {
        let g = neumann(1.0, 64);
        let spec = InterpolantSpec::volume(1.0, 4).unwrap();
        let p = ClosedLoopParams::new(1.0, 4.0, 1.0, 10.0, Some(spec)).unwrap();
        let z = Field::zeros(g);
        assert!(rhs(&z, &p).unwrap().max_abs() == 0.0);
        let next = step(&z, &p, 1e-3, Scheme::EtdRk2).unwrap();
        assert!(next.max_abs() <= 1e-14);
    }

    #[test]
    fn small_mode_rhs_is_linear() {
        let (nu, alpha, l, k, eps) = (0.7, 3.0, 2.0, 3usize, 1e-8);
        let p = ClosedLoopParams::open_loop(nu, alpha, l).unwrap();
        let g = neumann(l, 64);
        let kk = k as f64 * PI / l;
        let u = Field::from_fn(g, |x| eps * (kk * x).cos()).unwrap();
        let f = rhs(&u, &p).unwrap();
        for (a, b) in f.samples().iter().zip(u.samples()) {
            assert!((a - (alpha - nu * kk * kk) * b).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_root_is_open_loop_steady_state() {
        let alpha: f64 = 2.5;
        let p = ClosedLoopParams::open_loop(1.0, alpha, 1.0).unwrap();
        let u = Field::constant(neumann(1.0, 32), alpha.sqrt());
        // roundoff in the top modes is amplified by kappa^2 ~ 1e4
        assert!(rhs(&u, &p).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn delta_requires_periodic() {
        let spec = InterpolantSpec::delta(1.0, 4).unwrap();
        let p = ClosedLoopParams::new(1.0, 1.0, 1.0, 4.5, Some(spec)).unwrap();
        let u = Field::zeros(neumann(1.0, 64));
        assert!(matches!(
            rhs(&u, &p),
            Err(DynamicsError::BoundaryMismatch { .. })
        ));
        let spec = InterpolantSpec::volume(1.0, 4).unwrap();
        let p = ClosedLoopParams::new(1.0, 1.0, 1.0, 4.5, Some(spec)).unwrap();
        let u = Field::zeros(Grid1D::periodic(1.0, 64).unwrap());
        assert!(matches!(
            rhs(&u, &p),
            Err(DynamicsError::BoundaryMismatch { .. })
        ));
    }

    #[test]
    fn parameter_validation() {
        assert!(ClosedLoopParams::new(0.0, 1.0, 1.0, 0.0, None).is_err());
        assert!(ClosedLoopParams::new(1.0, -1.0, 1.0, 0.0, None).is_err());
        assert!(matches!(
            ClosedLoopParams::new(1.0, 1.0, 1.0, -0.5, None),
            Err(DynamicsError::InvalidParameter { name: "mu", .. })
        ));
    }

    #[test]
    fn heat_mode_decays_by_exact_factor() {
        // zero-amplitude limit: alpha small and amplitude tiny so only diffusion acts
        let (nu, l, k, dt) = (0.5, 1.0, 4usize, 1e-3);
        let p = ClosedLoopParams::open_loop(nu, 1e-300, l).unwrap();
        let g = neumann(l, 64);
        let kk = k as f64 * PI / l;
        let u = Field::from_fn(g, |x| 1e-100 * (kk * x).cos()).unwrap();
        let next = step(&u, &p, dt, Scheme::Etd1).unwrap();
        let ratio = next.to_spectral().coeffs()[k] / u.to_spectral().coeffs()[k];
        let exact = (-nu * kk * kk * dt).exp();
        assert!((ratio - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn linear_mode_growth_over_100_steps() {
        let (nu, alpha, l, k, dt) = (1.0, 4.0, PI, 1usize, 1e-4);
        let p = ClosedLoopParams::open_loop(nu, alpha, l).unwrap();
        let g = neumann(l, 64);
        let sys = ClosedLoop::new(p, g).unwrap();
        let u0 = Field::from_fn(g, |x| 1e-6 * (x * k as f64).cos()).unwrap();
        let stepper = sys.stepper(dt, Scheme::Etd1);
        let mut c = sys.state_coeffs(&u0);
        for n in 0..100 {
            c = stepper.advance(&sys, &c, n as f64 * dt).unwrap();
        }
        let ratio = c[k] / 1e-6;
        let exact = ((alpha - nu * (k as f64).powi(2)) * 100.0 * dt).exp();
        assert!((ratio - exact).abs() < 1e-4 * exact);
    }

    #[test]
    fn stability_limit_is_enforced() {
        let p = ClosedLoopParams::open_loop(1.0, 1.0, 1.0).unwrap();
        let u = Field::constant(neumann(1.0, 32), 10.0);
        // 0.5 / (1 + 300) ~ 1.66e-3
        assert!(matches!(
            step(&u, &p, 1e-2, Scheme::Etd1),
            Err(DynamicsError::StepTooLarge { .. })
        ));
        assert!(step(&u, &p, 1e-3, Scheme::Etd1).is_ok());
    }

    #[test]
    fn phi_functions_are_continuous_across_switch() {
        for &z in &[-0.00999, -0.01001, 0.00999, 0.01001] {
            let (p1, p2) = phi_functions(z);
            let e1 = (z as f64).exp_m1() / z;
            let e2 = ((z as f64).exp_m1() - z) / (z * z);
            assert!((p1 - e1).abs() < 1e-13);
            assert!((p2 - e2).abs() < 1e-11);
        }
        let (p1, p2) = phi_functions(0.0f64);
        assert_eq!((p1, p2), (1.0, 0.5));
    }

    #[test]
    fn differentiate_quadratic_exactly() {
        let t = [0.0, 0.1, 0.25, 0.3, 0.5];
        let f: Vec<f64> = t.iter().map(|x| 3.0 * x * x - x + 2.0).collect();
        let d = differentiate(&t, &f);
        for (x, v) in t.iter().zip(&d) {
            assert!((v - (6.0 * x - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_ic_run_is_identically_zero() {
        let g = neumann(1.0, 32);
        let cfg = SimConfig {
            dt: 1e-3,
            t_final: 0.1,
            record_every: 5,
            ic: InitialCondition::Constant { value: 0.0 },
            grid: g,
            scheme: Scheme::Etd1,
        };
        let spec = InterpolantSpec::volume(1.0, 2).unwrap();
        let p = ClosedLoopParams::new(1.0, 1.0, 1.0, 3.0, Some(spec)).unwrap();
        let rec = simulate(&cfg, &p).unwrap();
        assert_eq!(rec.len(), 21);
        for s in [&rec.l2, &rec.h1, &rec.l4p4, &rec.gamma2, &rec.energy_residual] {
            assert!(s.iter().all(|&v| v == 0.0));
        }
        assert!(rec.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn constant_ic_converges_to_root() {
        let l = 2.0;
        let cfg = SimConfig {
            dt: 1e-3,
            t_final: 20.0,
            record_every: 1000,
            ic: InitialCondition::Constant { value: 0.1 },
            grid: neumann(l, 16),
            scheme: Scheme::EtdRk2,
        };
        let p = ClosedLoopParams::open_loop(1.0, 1.0, l).unwrap();
        let rec = simulate(&cfg, &p).unwrap();
        assert!((rec.l2.last().unwrap() - l.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn blow_up_is_reported_with_partial_record() {
        // an initial step far beyond the stability limit
        let cfg = SimConfig {
            dt: 0.1,
            t_final: 1.0,
            record_every: 1,
            ic: InitialCondition::Constant { value: 5.0 },
            grid: neumann(1.0, 16),
            scheme: Scheme::Etd1,
        };
        let p = ClosedLoopParams::open_loop(1.0, 1.0, 1.0).unwrap();
        let err = simulate(&cfg, &p).unwrap_err();
        assert!(matches!(err.error, DynamicsError::StepTooLarge { t, .. } if t == 0.0));
        assert_eq!(err.partial.len(), 1);
    }

    #[test]
    fn conditions_fourier_example() {
        let spec = InterpolantSpec::fourier(1.0, 2, true).unwrap();
        let p = ClosedLoopParams::new(1.0, 4.0, 1.0, 10.0, Some(spec)).unwrap();
        let rep = check_conditions(&p);
        assert!((rep.r - 1.0).abs() < 1e-14);
        assert!(rep.existence.holds);
        assert!(rep.interpolant_decay.holds);
        assert_eq!(rep.interpolant_decay.exponent, Some(rep.r));
        let margin = 10.0 / (PI * PI) * 0.25;
        assert!((margin - 0.2533).abs() < 1e-4);
        assert!(!rep.delta_decay.applies);
    }

    #[test]
    fn conditions_open_loop() {
        let spec = InterpolantSpec::volume(1.0, 4).unwrap();
        let p = ClosedLoopParams::new(1.0, 1.0, 1.0, 0.0, Some(spec)).unwrap();
        let rep = check_conditions(&p);
        assert!(rep.open_loop);
        assert!(!rep.existence.holds && !rep.interpolant_decay.holds);
        assert!(!rep.volume_decay.holds && !rep.volume_decay_printed.holds);
        let rep = check_conditions(&ClosedLoopParams::open_loop(1.0, 1.0, 1.0).unwrap());
        assert!(rep.open_loop && rep.kind.is_none());
    }

    #[test]
    fn conditions_delta_example() {
        let spec = InterpolantSpec::delta(1.0, 4).unwrap();
        let p = ClosedLoopParams::new(1.0, 1.0, 1.0, 4.5, Some(spec)).unwrap();
        let rep = check_conditions(&p);
        assert!(rep.delta_decay.holds);
        assert!((rep.delta_decay.exponent.unwrap() - 0.25).abs() < 1e-14);
        assert!(!rep.existence.applies);
        let spec = InterpolantSpec::delta(1.0, 2).unwrap();
        let p = ClosedLoopParams::new(1.0, 1.0, 1.0, 4.5, Some(spec)).unwrap();
        // 2 mu h^2 = 2.25 > nu
        assert!(!check_conditions(&p).delta_decay.holds);
    }

    #[test]
    fn conditions_volume_proof_vs_printed() {
        let spec = InterpolantSpec::volume(1.0, 4).unwrap();
        // mu h = 10 >= nu = 1, nu > alpha h^2 / 4 pi^2; printed: (h/2pi)^2 mu = 0.0099 < 1
        let p = ClosedLoopParams::new(1.0, 20.0, 1.0, 40.0, Some(spec)).unwrap();
        let rep = check_conditions(&p);
        assert!(rep.volume_decay.holds);
        assert!(rep.volume_decay_printed.holds);
        let expected = (8.0 * PI).powi(2) - 20.0;
        assert!((rep.volume_decay.exponent.unwrap() - expected).abs() < 1e-9);
        // mu h < nu fails the proof condition but not the printed one
        let spec = InterpolantSpec::volume(1.0, 4).unwrap();
        let p = ClosedLoopParams::new(1.0, 1.0, 1.0, 2.0, Some(spec)).unwrap();
        let rep = check_conditions(&p);
        assert!(!rep.volume_decay.holds);
        assert!(rep.volume_decay_printed.holds);
    }
}
