use std::path::PathBuf;
use std::process::{Command, Output};

fn experiments() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../experiments")
}

fn jumpis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jumpis"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const ONE_STRIKE: &str = r#"
[model]
kind = "merton"
assets = 1
s0 = 100.0
sigma = 0.25
r = 0.05

[model.jumps]
intensity = 1.0
mean = 0.5
std = 0.2

[payoff]
kind = "asian"
strikes = [100.0]

[grid]
maturity = 1.0
steps = 12

[run]
n = 2000
"#;

#[test]
fn same_seed_gives_byte_identical_records() {
    let config = experiments().join("table1_merton_asian.toml");
    let args = [
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "42",
        "--n",
        "2000",
        "--format",
        "records",
        "--omit-timings",
    ];
    let a = jumpis(&args);
    let b = jumpis(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    let other = jumpis(&[&args[..3], &["43"], &args[4..]].concat());
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn records_carry_every_report_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(&dir, "one.toml", ONE_STRIKE);
    let out = jumpis(&["--config", &config, "--format", "records", "--strategies", "gaussian_poisson", "--scope", "reduced"]);
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["strategy"], "crude");
    assert!(lines[0]["scope"].is_null());
    let gp = &lines[1];
    assert_eq!((gp["strategy"].as_str(), gp["scope"].as_str()), (Some("gaussian_poisson"), Some("reduced")));
    for key in ["strike", "price", "var", "stdError", "ci95", "m", "n", "seeds", "iterations", "gradNorm", "converged", "optimalParams", "timings"] {
        assert!(!gp[key].is_null(), "missing {key}");
    }
    assert_eq!(gp["n"], 2000);
    assert_eq!(gp["m"], 2000);
}

#[test]
fn crude_only_gives_a_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(&dir, "one.toml", ONE_STRIKE);
    let out = jumpis(&["--config", &config, "--format", "records", "--strategies", "crude"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains("\"strategy\":\"crude\""));
}

#[test]
fn basket_barrier_table_has_full_and_reduced_rows_per_strike() {
    let config = experiments().join("table6_merton_basket_barrier.toml");
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("table6.txt");
    let out = jumpis(&["--config", config.to_str().unwrap(), "--n", "500", "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let table = std::fs::read_to_string(out_path).unwrap();
    assert!(table.lines().any(|l| l.contains("Strike") && l.contains("VarGP")));
    assert_eq!(table.lines().filter(|l| l.starts_with("Full")).count(), 3);
    assert_eq!(table.lines().filter(|l| l.starts_with("Reduced")).count(), 3);
}

#[test]
fn invalid_config_exits_with_two_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let singular = ONE_STRIKE.replace("assets = 1", "assets = 10").replace("r = 0.05", "r = 0.05\nrho = 1.0");
    let config = write_config(&dir, "bad.toml", &singular);
    let out = jumpis(&["--config", &config]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.rho"));

    let unknown = ONE_STRIKE.replace("std = 0.2", "std = 0.2\nskew = 1.0");
    let config = write_config(&dir, "unknown.toml", &unknown);
    let out = jumpis(&["--config", &config]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.jumps"));

    let out = jumpis(&["--config", &dir.path().join("missing.toml").display().to_string()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_strategies_give_a_partial_exit() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(&dir, "far.toml", &ONE_STRIKE.replace("strikes = [100.0]", "strikes = [1e9]"));
    let out = jumpis(&["--config", &config, "--format", "records", "--strategies", "gaussian", "--scope", "reduced"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().contains("\"error\""));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn unknown_strategy_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(&dir, "one.toml", ONE_STRIKE);
    let out = jumpis(&["--config", &config, "--strategies", "antithetic"]);
    assert_eq!(out.status.code(), Some(2));
}
