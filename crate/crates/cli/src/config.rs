//! Run configuration: a single JSON document with the sections
//! `grid`, `params`, `control`, `sim` and `experiment`. Unknown keys are
//! rejected.

use std::fmt;
use std::path::Path;

use detctl_core::{
    Boundary, ClosedLoopParams, DynamicsError, Grid1D, InitialCondition, InterpolantKind,
    InterpolantSpec, MuRule, Scheme, SimConfig, StabilizationCriterion, SweepSetup,
};
use serde::{Deserialize, Serialize};

use crate::presets;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub params: ParamsSection,
    #[serde(default)]
    pub control: Option<ControlSection>,
    pub sim: SimSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub resolution: usize,
    /// Defaults to the boundary the control family needs, or Neumann.
    #[serde(default)]
    pub boundary: Option<Boundary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub nu: f64,
    pub alpha: f64,
    pub length: f64,
    #[serde(default)]
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub kind: InterpolantKind,
    pub rank: usize,
    #[serde(default = "yes")]
    pub include_mean: bool,
    #[serde(default)]
    pub obs_points: Option<Vec<f64>>,
    #[serde(default)]
    pub act_points: Option<Vec<f64>>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub scheme: Scheme,
    pub ic: InitialCondition,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default)]
    pub name: Option<String>,
    /// Relative slack on decay bounds.
    #[serde(default = "default_slack")]
    pub slack: f64,
    /// Start of the decay-rate fit window; defaults to `1/r` when `r > 0`.
    #[serde(default)]
    pub fit_t0: Option<f64>,
    /// Energy residual tolerance relative to `max(||u||_{H^1}^2, 1)`.
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    /// Required `||u_x(T)|| / ||u_x(0)||` once `T >= 30 / r`.
    #[serde(default = "default_h1_ratio")]
    pub h1_ratio: f64,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

fn default_slack() -> f64 {
    0.05
}

fn default_residual_tol() -> f64 {
    1e-3
}

fn default_h1_ratio() -> f64 {
    1e-3
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: None,
            slack: default_slack(),
            fit_t0: None,
            residual_tol: default_residual_tol(),
            h1_ratio: default_h1_ratio(),
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub alphas: Vec<f64>,
    pub n_min: usize,
    pub n_max: usize,
    pub mu_rule: MuRule,
    #[serde(default)]
    pub criterion: StabilizationCriterion,
    /// Accepted range of `N*(alpha_{i+1}) / N*(alpha_i)`.
    #[serde(default)]
    pub expected_ratio: Option<[f64; 2]>,
}

/// A configuration problem tied to a field path such as `params.mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

/// Where a configuration came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Preset(&'static str),
    File(String),
    /// A run manifest being replayed.
    Manifest(String),
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub source: Source,
    /// Output file stem.
    pub name: String,
}

/// Reads `arg` as a preset name, a config file, or a run manifest.
pub fn load(arg: &str) -> Result<LoadedConfig, ConfigError> {
    let path = Path::new(arg);
    let (text, source, stem) = if path.exists() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {arg}: {e}")))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("run")
            .to_string();
        (text, Source::File(arg.to_string()), stem)
    } else if let Some((name, text)) = presets::get(arg) {
        (text.to_string(), Source::Preset(name), name.to_string())
    } else {
        return Err(ConfigError::new(
            "",
            format!(
                "{arg} is neither a file nor a preset (presets: {})",
                presets::names().join(", ")
            ),
        ));
    };
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| ConfigError::new("", format!("invalid JSON: {e}")))?;
    let (value, source) = match value.get("config") {
        Some(cfg) if value.get("tool").is_some() => {
            let src = match source {
                Source::File(f) => Source::Manifest(f),
                other => other,
            };
            (cfg.clone(), src)
        }
        _ => (value, source),
    };
    let config = parse_value(value)?;
    let name = config.experiment.name.clone().unwrap_or(stem);
    Ok(LoadedConfig {
        config,
        source,
        name,
    })
}

pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| ConfigError::new("", format!("invalid JSON: {e}")))?;
    parse_value(value)
}

fn parse_value(value: serde_json::Value) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { String::new() } else { path };
        ConfigError::new(field, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

/// Everything needed for a single run.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub params: ClosedLoopParams,
    pub sim: SimConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::new(field, format!("must be positive, got {v}")))
            }
        };
        positive("params.nu", self.params.nu)?;
        positive("params.alpha", self.params.alpha)?;
        positive("params.length", self.params.length)?;
        if !(self.params.mu.is_finite() && self.params.mu >= 0.0) {
            return Err(ConfigError::new(
                "params.mu",
                format!("must be >= 0, got {}", self.params.mu),
            ));
        }
        positive("sim.dt", self.sim.dt)?;
        positive("sim.t_final", self.sim.t_final)?;
        if self.sim.record_every == 0 {
            return Err(ConfigError::new("sim.record_every", "must be >= 1"));
        }
        let e = &self.experiment;
        if !(e.slack.is_finite() && e.slack >= 0.0) {
            return Err(ConfigError::new("experiment.slack", "must be >= 0"));
        }
        positive("experiment.residual_tol", e.residual_tol)?;
        positive("experiment.h1_ratio", e.h1_ratio)?;
        if let Some(sw) = &e.sweep {
            if sw.alphas.is_empty() {
                return Err(ConfigError::new("experiment.sweep.alphas", "must not be empty"));
            }
            for (i, &a) in sw.alphas.iter().enumerate() {
                positive(&format!("experiment.sweep.alphas[{i}]"), a)?;
            }
            if sw.n_min == 0 || sw.n_max < sw.n_min {
                return Err(ConfigError::new(
                    "experiment.sweep.n_max",
                    format!("need 1 <= n_min <= n_max, got {}..={}", sw.n_min, sw.n_max),
                ));
            }
            if self.control.is_none() {
                return Err(ConfigError::new("control", "a sweep needs a control family"));
            }
            positive("experiment.sweep.criterion.ratio", sw.criterion.ratio)?;
            positive("experiment.sweep.criterion.horizon", sw.criterion.horizon)?;
        }
        // builds every object once so that core validation errors surface here
        if e.sweep.is_none() {
            self.run_setup()?;
        } else {
            self.sweep_setup()?;
        }
        Ok(())
    }

    pub fn boundary(&self) -> Boundary {
        self.grid.boundary.unwrap_or_else(|| {
            self.control
                .as_ref()
                .map_or(Boundary::Neumann, |c| c.kind.boundary())
        })
    }

    pub fn spec(&self, rank: usize) -> Result<Option<InterpolantSpec>, ConfigError> {
        let Some(c) = &self.control else {
            return Ok(None);
        };
        let err = |e: detctl_core::InterpolantError| ConfigError::new("control", e.to_string());
        let mut spec = InterpolantSpec::new(c.kind, self.params.length, rank).map_err(err)?;
        spec = spec.with_mean(c.include_mean);
        if let Some(pts) = &c.obs_points {
            spec = spec
                .with_obs_points(pts.clone())
                .map_err(|e| ConfigError::new("control.obs_points", e.to_string()))?;
        }
        if let Some(pts) = &c.act_points {
            spec = spec
                .with_act_points(pts.clone())
                .map_err(|e| ConfigError::new("control.act_points", e.to_string()))?;
        }
        Ok(Some(spec))
    }

    pub fn run_setup(&self) -> Result<RunSetup, ConfigError> {
        let rank = self.control.as_ref().map_or(0, |c| c.rank);
        let spec = self.spec(rank)?;
        let p = &self.params;
        let params = ClosedLoopParams::new(p.nu, p.alpha, p.length, p.mu, spec)
            .map_err(dynamics_error)?;
        let grid = Grid1D::new(p.length, self.grid.resolution, self.boundary())
            .map_err(|e| ConfigError::new("grid.resolution", e.to_string()))?;
        let sim = SimConfig {
            dt: self.sim.dt,
            t_final: self.sim.t_final,
            record_every: self.sim.record_every,
            ic: self.sim.ic.clone(),
            grid,
            scheme: self.sim.scheme,
        };
        sim.validate().map_err(dynamics_error)?;
        // surfaces boundary, rank and band-limit problems before running
        detctl_core::ClosedLoop::new(params.clone(), grid).map_err(dynamics_error)?;
        sim.ic.field(&grid).map_err(dynamics_error)?;
        Ok(RunSetup { params, sim })
    }

    pub fn sweep_setup(&self) -> Result<SweepSetup, ConfigError> {
        let kind = self
            .control
            .as_ref()
            .map(|c| c.kind)
            .ok_or_else(|| ConfigError::new("control", "a sweep needs a control family"))?;
        if self.grid.boundary.is_some_and(|b| b != kind.boundary()) {
            return Err(ConfigError::new(
                "grid.boundary",
                format!("{kind} needs a {} grid", kind.boundary()),
            ));
        }
        Grid1D::new(self.params.length, self.grid.resolution, kind.boundary())
            .map_err(|e| ConfigError::new("grid.resolution", e.to_string()))?;
        Ok(SweepSetup {
            kind,
            resolution: self.grid.resolution,
            dt: self.sim.dt,
            scheme: self.sim.scheme,
            ic: self.sim.ic.clone(),
        })
    }

    /// Seed of the random initial condition, if any.
    pub fn seed(&self) -> Option<u64> {
        match self.sim.ic {
            InitialCondition::RandomBand { seed, .. } => Some(seed),
            _ => None,
        }
    }
}

fn dynamics_error(e: DynamicsError) -> ConfigError {
    match e {
        DynamicsError::InvalidParameter { name, reason } => {
            let field = match name {
                "dt" | "t_final" | "record_every" | "ic" => format!("sim.{name}"),
                "control" => "control".to_string(),
                other => format!("params.{other}"),
            };
            ConfigError::new(field, reason)
        }
        DynamicsError::BoundaryMismatch { .. } => ConfigError::new("grid.boundary", e.to_string()),
        DynamicsError::Interpolant(inner) => ConfigError::new("control", inner.to_string()),
        DynamicsError::Field(inner) => ConfigError::new("grid", inner.to_string()),
        other => ConfigError::new("", other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "grid": {"resolution": 64},
        "params": {"nu": 1.0, "alpha": 4.0, "length": 1.0, "mu": 10.0},
        "control": {"kind": "fourier_projection", "rank": 2},
        "sim": {"dt": 1e-4, "t_final": 1.0, "ic": {"constant": {"value": 0.0}}}
    }"#;

    #[test]
    fn base_parses_with_defaults() {
        let c = parse_str(BASE).unwrap();
        assert_eq!(c.sim.record_every, 1);
        assert_eq!(c.sim.scheme, Scheme::Etd1);
        assert_eq!(c.experiment.slack, 0.05);
        assert!(c.control.as_ref().unwrap().include_mean);
        assert_eq!(c.boundary(), Boundary::Neumann);
    }

    #[test]
    fn negative_gain_names_the_field() {
        let text = BASE.replace("\"mu\": 10.0", "\"mu\": -1.0");
        let err = parse_str(&text).unwrap_err();
        assert_eq!(err.field, "params.mu");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BASE.replace("\"rank\": 2", "\"rank\": 2, \"rnak\": 3");
        let err = parse_str(&text).unwrap_err();
        assert_eq!(err.field, "control.rnak");
        assert!(err.message.contains("rnak"));
        let text = BASE.replace("\"grid\"", "\"extra\": 1, \"grid\"");
        assert!(parse_str(&text).unwrap_err().message.contains("extra"));
    }

    #[test]
    fn type_errors_carry_the_path() {
        let text = BASE.replace("\"dt\": 1e-4", "\"dt\": \"small\"");
        assert_eq!(parse_str(&text).unwrap_err().field, "sim.dt");
    }

    #[test]
    fn core_errors_are_mapped_to_fields() {
        let text = BASE.replace("\"resolution\": 64", "\"resolution\": 4");
        assert_eq!(parse_str(&text).unwrap_err().field, "grid.resolution");
        let text = BASE.replace("\"resolution\": 64", "\"resolution\": 64, \"boundary\": \"periodic\"");
        assert_eq!(parse_str(&text).unwrap_err().field, "grid.boundary");
        let text = BASE.replace("{\"constant\": {\"value\": 0.0}}", "{\"single_mode\": {\"k\": 9, \"amplitude\": 1.0}}");
        assert_eq!(parse_str(&text).unwrap_err().field, "sim.ic");
    }

    #[test]
    fn empty_sweep_is_rejected() {
        let text = BASE.replace(
            "\"sim\"",
            r#""experiment": {"sweep": {"alphas": [], "n_min": 1, "n_max": 4,
                "mu_rule": {"proportional": {"factor": 5.0}}}}, "sim""#,
        );
        assert_eq!(parse_str(&text).unwrap_err().field, "experiment.sweep.alphas");
    }

    #[test]
    fn presets_all_validate() {
        for name in presets::names() {
            let loaded = load(name).unwrap();
            assert_eq!(loaded.source, Source::Preset(name));
        }
    }
}
