//! Finite-rank feedback stabilization of the 1D Chafee-Infante equation
//!
//! ```text
//! u_t - nu u_xx - alpha u + u^3 = -mu I_h(u),   x in (0, L)
//! ```
//!
//! The state lives on a uniform grid with Neumann (cosine) or periodic
//! (Fourier) boundary conditions. `I_h` is built from a handful of
//! observations: volume averages, nodal values, low Fourier modes, or
//! nodal values fed back through point actuators.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`) with `f64`
//! as the default; the `*F32` aliases name the single precision variants.

pub mod analysis;
pub mod dynamics;
pub mod field;
pub mod interpolants;
pub mod oracle;
pub mod scalar;
pub mod suites;

pub use analysis::{
    absorbing_bounds, fit_decay_rate, linear_growth_rate, minimal_stabilizing_n,
    unstable_mode_count, verify_decay_bound, AnalysisError, DecayFit, MuRule,
    StabilizationCriterion, SweepCell, SweepOutcome, SweepSetup,
};
pub use dynamics::{
    check_conditions, rhs, simulate, simulate_full, step, ClosedLoop, ClosedLoopParams,
    ConditionReport, DynamicsError, InitialCondition, Scheme, SimConfig, SimulationFailure,
    TheoremCheck, TrajectoryRecord,
};
pub use field::{Boundary, Field, FieldError, Grid1D, SpectralOps, Spectrum};
pub use interpolants::{
    actuate_delta, defect, gamma_sq, interpolate, observe, Controller, InterpolantError,
    InterpolantKind, InterpolantSpec, Observations,
};
pub use oracle::{
    analytic_linear_mode, empirical_bh_constant, logistic_constant_state, BhEstimate,
    OracleError, TrialEnsemble,
};
pub use scalar::Scalar;

pub type FieldF32 = Field<f32>;
pub type GridF32 = Grid1D<f32>;
pub type SpectrumF32 = Spectrum<f32>;
pub type InterpolantSpecF32 = InterpolantSpec<f32>;
pub type ClosedLoopParamsF32 = ClosedLoopParams<f32>;
pub type SimConfigF32 = SimConfig<f32>;
pub type TrajectoryRecordF32 = TrajectoryRecord<f32>;
