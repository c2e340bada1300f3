//! `detctl`: run closed-loop simulations, rank sweeps and inequality suites
//! from JSON configs or built-in presets.

pub mod config;
pub mod presets;
pub mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use detctl_core::suites::{run_suite, DEFAULT_SEED, SUITES};
use detctl_core::{
    minimal_stabilizing_n, simulate_full, AnalysisError, ClosedLoopParams,
    SweepCell,
};
use thiserror::Error;

use config::{load, ConfigError, LoadedConfig, Source};
use report::{
    summarize, sweep_csv, to_json, trajectory_csv, unix_now, write_file, Outputs, RunManifest,
    RunSummary, SweepRow, SweepSummary,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "detctl", version, about = "Finite-rank feedback stabilization experiments")]
pub struct Cli {
    /// Directory for CSV, summary and manifest files.
    #[arg(long, global = true, env = "DETCTL_OUT_DIR", default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads for concurrent runs (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one closed loop from a config file, manifest or preset name.
    Simulate { config: String },
    /// Scan controller ranks for the smallest stabilizing one.
    Sweep { config: String },
    /// Run a seeded property suite.
    Verify {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
        suite: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        EXIT_USAGE
    }
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    pub outputs: Outputs,
}

pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match execute(&cli) {
        Ok(out) if out.passed => ExitCode::from(EXIT_OK),
        Ok(_) => ExitCode::from(EXIT_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let run = || match &cli.command {
        Command::Simulate { config } => cmd_simulate(config, &cli.out_dir),
        Command::Sweep { config } => cmd_sweep(config, &cli.out_dir),
        Command::Verify { suite, seed } => cmd_verify(suite, *seed, &cli.out_dir),
    };
    match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(run),
        None => run(),
    }
}

fn source_label(src: &Source) -> String {
    match src {
        Source::Preset(name) => format!("preset:{name}"),
        Source::File(path) => format!("file:{path}"),
        Source::Manifest(path) => format!("manifest:{path}"),
    }
}

/// The config as recorded in a manifest, with the output stem pinned so a
/// replay writes files under the same name.
fn named_config(loaded: &LoadedConfig) -> config::RunConfig {
    let mut config = loaded.config.clone();
    config.experiment.name = Some(loaded.name.clone());
    config
}

/// Runs a loaded single-run config and returns its summary and CSV text.
pub fn run_config(loaded: &LoadedConfig) -> Result<(RunSummary, String), CliError> {
    let cfg = &loaded.config;
    let setup = cfg.run_setup()?;
    let (rec, error) = match simulate_full(&setup.sim, &setup.params) {
        Ok(out) => (out.record, None),
        Err(fail) => (fail.partial, Some(fail.error.to_string())),
    };
    let summary = summarize(
        &loaded.name,
        &rec,
        &setup.params,
        &cfg.experiment,
        cfg.sim.t_final,
        error,
    );
    Ok((summary, trajectory_csv(&rec)))
}

pub fn cmd_simulate(arg: &str, out_dir: &Path) -> Result<Outcome, CliError> {
    let loaded = load(arg)?;
    if loaded.config.experiment.sweep.is_some() {
        return Err(ConfigError {
            field: "experiment.sweep".into(),
            message: "this config describes a sweep; run it with `detctl sweep`".into(),
        }
        .into());
    }
    let started = unix_now();
    let (summary, csv) = run_config(&loaded)?;
    let name = &loaded.name;
    let csv_path = write_file(out_dir, &format!("{name}.csv"), &csv)?;
    let summary_path = write_file(out_dir, &format!("{name}.summary.json"), &to_json(&summary))?;
    let manifest_path = out_dir.join(format!("{name}.manifest.json"));
    let outputs = Outputs {
        csv: Some(csv_path),
        summary: summary_path,
        manifest: Some(manifest_path),
    };
    let manifest = RunManifest {
        tool: "detctl".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "simulate".into(),
        source: source_label(&loaded.source),
        seed: loaded.config.seed(),
        config: named_config(&loaded),
        started_unix: started,
        finished_unix: unix_now(),
        conditions: Some(summary.conditions.clone()),
        outputs: outputs.clone(),
    };
    write_file(out_dir, &format!("{name}.manifest.json"), &to_json(&manifest))?;
    if let Some(err) = &summary.error {
        eprintln!("{name}: run stopped early: {err}");
    }
    println!(
        "{name}: {} ({} records, summary {})",
        if summary.passed { "passed" } else { "FAILED" },
        summary.records,
        outputs.summary.display()
    );
    Ok(Outcome {
        passed: summary.passed,
        outputs,
    })
}

/// Runs every `(alpha, N)` cell of a sweep config.
pub fn run_sweep(loaded: &LoadedConfig) -> Result<(SweepSummary, Vec<SweepCell>), CliError> {
    let cfg = &loaded.config;
    let sw = cfg
        .experiment
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError {
            field: "experiment.sweep".into(),
            message: "missing; this config describes a single run".into(),
        })?;
    let setup = cfg.sweep_setup()?;
    let ranks: Vec<usize> = (sw.n_min..=sw.n_max).collect();
    let p = &cfg.params;
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for (i, &alpha) in sw.alphas.iter().enumerate() {
        let base = ClosedLoopParams::open_loop(p.nu, alpha, p.length).map_err(|e| ConfigError {
            field: format!("experiment.sweep.alphas[{i}]"),
            message: e.to_string(),
        })?;
        let (minimal_n, found) =
            match minimal_stabilizing_n(&base, sw.mu_rule, &ranks, sw.criterion, &setup) {
                Ok(out) => (Some(out.minimal_n), out.cells),
                Err(AnalysisError::NotFound { cells }) => (None, cells),
                Err(e) => return Err(CliError::Usage(e.to_string())),
            };
        cells.extend(found);
        rows.push(SweepRow {
            alpha,
            minimal_n,
            reference: (alpha * p.length * p.length / p.nu).sqrt() / std::f64::consts::PI,
        });
    }
    let ratios: Vec<Option<f64>> = rows
        .windows(2)
        .map(|w| match (w[0].minimal_n, w[1].minimal_n) {
            (Some(a), Some(b)) => Some(b as f64 / a as f64),
            _ => None,
        })
        .collect();
    let in_range = |r: &Option<f64>| match (r, sw.expected_ratio) {
        (Some(v), Some([lo, hi])) => *v >= lo && *v <= hi,
        (Some(_), None) => true,
        (None, _) => false,
    };
    let passed = rows.iter().all(|r| r.minimal_n.is_some()) && ratios.iter().all(in_range);
    let summary = SweepSummary {
        name: loaded.name.clone(),
        rows,
        ratios,
        expected_ratio: sw.expected_ratio,
        failed_cells: cells.iter().filter(|c| c.error.is_some()).count(),
        passed,
    };
    Ok((summary, cells))
}

pub fn cmd_sweep(arg: &str, out_dir: &Path) -> Result<Outcome, CliError> {
    let loaded = load(arg)?;
    let started = unix_now();
    let (summary, cells) = run_sweep(&loaded)?;
    let name = &loaded.name;
    let csv_path = write_file(out_dir, &format!("{name}.csv"), &sweep_csv(&cells, &summary.rows))?;
    let summary_path = write_file(out_dir, &format!("{name}.summary.json"), &to_json(&summary))?;
    let outputs = Outputs {
        csv: Some(csv_path),
        summary: summary_path,
        manifest: Some(out_dir.join(format!("{name}.manifest.json"))),
    };
    let manifest = RunManifest {
        tool: "detctl".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "sweep".into(),
        source: source_label(&loaded.source),
        seed: loaded.config.seed(),
        config: named_config(&loaded),
        started_unix: started,
        finished_unix: unix_now(),
        conditions: None,
        outputs: outputs.clone(),
    };
    write_file(out_dir, &format!("{name}.manifest.json"), &to_json(&manifest))?;
    for row in &summary.rows {
        let n = row.minimal_n.map_or("none".to_string(), |n| n.to_string());
        println!("alpha = {}: minimal N = {n}", row.alpha);
    }
    Ok(Outcome {
        passed: summary.passed,
        outputs,
    })
}

pub fn cmd_verify(suite: &str, seed: u64, out_dir: &Path) -> Result<Outcome, CliError> {
    let report = run_suite(suite, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let json = to_json(&report);
    let path = write_file(out_dir, &format!("verify-{suite}.json"), &json)?;
    print!("{json}");
    Ok(Outcome {
        passed: report.passed,
        outputs: Outputs {
            csv: None,
            summary: path,
            manifest: None,
        },
    })
}
