use std::path::Path;
use std::process::ExitCode;

use detctl::config::load;
use detctl::report::{RunSummary, CSV_HEADER};
use detctl::{main_with_args, run_config, run_sweep, Cli, Command};

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

fn short_run(mu: f64, ic: &str) -> String {
    format!(
        r#"{{
  "grid": {{ "resolution": 32 }},
  "params": {{ "nu": 1.0, "alpha": 4.0, "length": 1.0, "mu": {mu} }},
  "control": {{ "kind": "fourier_projection", "rank": 2 }},
  "sim": {{ "dt": 1e-4, "t_final": 0.2, "record_every": 100, "ic": {ic} }}
}}"#
    )
}

const RANDOM_IC: &str = r#"{ "random_band": { "seed": 7, "kmax": 3, "amplitude": 0.5 } }"#;

#[test]
fn unknown_suite_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let code = main_with_args([
        "detctl",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "verify",
        "bogus",
    ]);
    assert_eq!(code, ExitCode::from(2));
}

#[test]
fn negative_gain_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "neg.json", &short_run(-1.0, RANDOM_IC));
    let err = load(&path).unwrap_err();
    assert_eq!(err.field, "params.mu");
    let code = main_with_args(["detctl", "--out-dir", dir.path().to_str().unwrap(), "simulate", &path]);
    assert_eq!(code, ExitCode::from(2));
    assert!(!dir.path().join("neg.csv").exists());
}

#[test]
fn unknown_key_names_the_field() {
    let text = short_run(10.0, RANDOM_IC).replace("\"nu\"", "\"nuu\"");
    let err = detctl::config::parse_str(&text).unwrap_err();
    assert_eq!(err.field, "params.nuu");
    assert!(err.message.contains("nuu"), "{err}");
}

#[test]
fn zero_state_stays_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "zero.json", &short_run(10.0, r#"{ "constant": { "value": 0.0 } }"#));
    let out = dir.path().join("out");
    let code = main_with_args(["detctl", "--out-dir", out.to_str().unwrap(), "simulate", &path]);
    assert_eq!(code, ExitCode::from(0));
    let csv = std::fs::read_to_string(out.join("zero.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 21);
    for row in rows {
        for cell in row.split(',').skip(1) {
            assert_eq!(cell.parse::<f64>().unwrap(), 0.0, "{row}");
        }
    }
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "env.json", &short_run(10.0, RANDOM_IC));
    let out = dir.path().join("from-env");
    std::env::set_var("DETCTL_OUT_DIR", &out);
    let cli = <Cli as clap::Parser>::try_parse_from(["detctl", "simulate", path.as_str()]).unwrap();
    std::env::remove_var("DETCTL_OUT_DIR");
    assert_eq!(cli.out_dir, out);
    assert!(matches!(cli.command, Command::Simulate { .. }));
    let outcome = detctl::execute(&cli).unwrap();
    assert!(outcome.passed);
    assert!(out.join("env.csv").exists());
    assert!(out.join("env.summary.json").exists());
}

#[test]
fn manifest_replay_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "replay.json", &short_run(10.0, RANDOM_IC));
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    detctl::cmd_simulate(&path, &first).unwrap();
    let manifest = first.join("replay.manifest.json");
    let loaded = load(manifest.to_str().unwrap()).unwrap();
    assert!(matches!(loaded.source, detctl::config::Source::Manifest(_)));
    assert_eq!(loaded.config.seed(), Some(7));
    detctl::cmd_simulate(manifest.to_str().unwrap(), &second).unwrap();
    for name in ["replay.csv", "replay.summary.json"] {
        assert_eq!(
            std::fs::read(first.join(name)).unwrap(),
            std::fs::read(second.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn single_cell_sweep_matches_simulate() {
    let sweep = r#"{
  "grid": { "resolution": 64 },
  "params": { "nu": 1.0, "alpha": 4.0, "length": 1.0 },
  "control": { "kind": "volume_averages", "rank": 2 },
  "sim": { "dt": 1e-3, "t_final": 1.0,
           "ic": { "random_band": { "seed": 1, "kmax": 4, "amplitude": 1.0 } } },
  "experiment": { "sweep": {
      "alphas": [4.0], "n_min": 2, "n_max": 2,
      "mu_rule": { "proportional": { "factor": 5.0 } },
      "criterion": { "ratio": 1e-4, "horizon": 20.0 } } }
}"#;
    // the same cell as an ordinary run: mu = 5 alpha, T = horizon / alpha
    let single = r#"{
  "grid": { "resolution": 64 },
  "params": { "nu": 1.0, "alpha": 4.0, "length": 1.0, "mu": 20.0 },
  "control": { "kind": "volume_averages", "rank": 2 },
  "sim": { "dt": 1e-3, "t_final": 5.0, "record_every": 100,
           "ic": { "random_band": { "seed": 1, "kmax": 4, "amplitude": 1.0 } } }
}"#;
    let dir = tempfile::tempdir().unwrap();
    let (summary, cells) = run_sweep(&load(&write_config(dir.path(), "sw.json", sweep)).unwrap()).unwrap();
    assert_eq!(cells.len(), 1);
    let cell = &cells[0];
    assert_eq!((cell.n, cell.mu, cell.resolution, cell.dt, cell.t_final), (2, 20.0, 64, 1e-3, 5.0));
    assert_eq!(summary.rows[0].minimal_n, Some(2));

    let (run, _) = run_config(&load(&write_config(dir.path(), "one.json", single)).unwrap()).unwrap();
    let run: RunSummary = run;
    assert_eq!(run.final_time, Some(5.0));
    let ratio = (run.l2_sq_final.unwrap() / run.l2_sq_initial.unwrap()).sqrt();
    assert!(
        (ratio - cell.terminal_ratio).abs() <= 1e-9 * ratio,
        "{ratio} vs {}",
        cell.terminal_ratio
    );
}

#[test]
fn empty_sweep_is_rejected() {
    let text = r#"{
  "grid": { "resolution": 64 },
  "params": { "nu": 1.0, "alpha": 4.0, "length": 1.0 },
  "control": { "kind": "volume_averages", "rank": 1 },
  "sim": { "dt": 1e-3, "t_final": 1.0, "ic": { "constant": { "value": 0.1 } } },
  "experiment": { "sweep": {
      "alphas": [], "n_min": 1, "n_max": 4,
      "mu_rule": { "constant": { "mu": 10.0 } },
      "criterion": { "ratio": 1e-4, "horizon": 20.0 } } }
}"#;
    let err = detctl::config::parse_str(text).unwrap_err();
    assert_eq!(err.field, "experiment.sweep.alphas");
}

#[test]
fn sweep_config_is_refused_by_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let err = detctl::cmd_simulate("sweep-remark21", dir.path()).unwrap_err();
    assert!(err.to_string().contains("experiment.sweep"), "{err}");
}
