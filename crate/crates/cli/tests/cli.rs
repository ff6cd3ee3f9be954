use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stoch-euler"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().arg("--out-dir").arg(dir).args(args).output().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const SUBCOMMANDS: [(&str, &[&str]); 7] = [
    ("simulate", &["--problem", "--h", "--t-end", "--dynamics", "--u0", "--grid-points"]),
    ("ded-error", &["--a", "--u0", "--h-grid", "--t-grid", "--slope-h-max"]),
    ("rmste", &["--problem", "--eps-grid", "--h-policies", "--orders", "--n", "--drop-coarsest"]),
    ("stability", &["--problem", "--diag", "--h-grid", "--t-grid", "--n", "--kappa"]),
    ("ded-oscillator", &["--h-grid", "--t-end", "--grid-points"]),
    ("lyapunov", &["--a", "--eigs", "--h", "--kappa", "--mc", "--n", "--t-grid"]),
    ("simplex-test", &["--k", "--t", "--h", "--n", "--negative-control"]),
];

#[test]
fn help_lists_every_flag() {
    for (cmd, flags) in SUBCOMMANDS {
        let out = bin().args([cmd, "--help"]).output().unwrap();
        assert!(out.status.success(), "{cmd}");
        let text = String::from_utf8(out.stdout).unwrap();
        for f in flags.iter().chain(&["--seed", "--workers", "--out-dir", "--config", "--svg"]) {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn unknown_flags_fail() {
    let tmp = tempfile::tempdir().unwrap();
    for (cmd, _) in SUBCOMMANDS {
        let out = run_in(tmp.path(), &[cmd, "--bogus"]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
    }
}

#[test]
fn simulate_matches_golden_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["simulate", "--problem", "logistic", "--h", "0.8", "--seed", "1", "--t-end", "10"]);
    assert!(out.status.success());
    let got = fs::read_to_string(tmp.path().join("simulate.csv")).unwrap();
    let want = include_str!("golden/simulate_logistic_h0.8_seed1.csv");
    assert_eq!(got, want);
}

fn read_rows(path: &Path) -> Vec<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(|x| x.parse().unwrap()).collect()).collect()
}

// The companion value only changes at a jump, where it equals the path.
#[test]
fn simulate_grid_contains_jump_times() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &["simulate", "--problem", "oscillator", "--h", "0.3", "--t-end", "6", "--grid-points", "7"],
    );
    assert!(out.status.success());
    let rows = read_rows(&tmp.path().join("simulate.csv"));
    let mut jumps = 0;
    for w in rows.windows(2) {
        assert!(w[1][0] > w[0][0]);
        if w[1][3..5] != w[0][3..5] {
            jumps += 1;
            assert_eq!(w[1][1..3], w[1][3..5], "t = {}", w[1][0]);
        }
    }
    assert!(jumps > 5, "{jumps} jumps");
    assert!(rows.len() > 7 + jumps - 1);
}

#[test]
fn decaying_path_stays_finite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["simulate", "--problem", "linear1d", "--a", "1", "--h", "0.8"]);
    assert!(out.status.success());
    let rows = read_rows(&tmp.path().join("simulate.csv"));
    assert!(rows.iter().all(|r| r[1].is_finite()));
    assert!(rows.last().unwrap()[1].abs() < 1.0);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, r#"{"seed": 1, "problem": "logistic", "h": 0.5, "t_end": 10}"#).unwrap();
    let dir = tmp.path().join("out");
    let out =
        bin().arg("--config").arg(&cfg).arg("--out-dir").arg(&dir).args(["simulate", "--h", "0.8"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&dir);
    assert_eq!(m["config"]["command"]["h"], 0.8);
    assert_eq!(m["config"]["command"]["problem"], "logistic");
    assert_eq!(m["config"]["global"]["seed"], 1);
    // Same run as the golden file, reached through the config file.
    assert_eq!(
        fs::read_to_string(dir.join("simulate.csv")).unwrap(),
        include_str!("golden/simulate_logistic_h0.8_seed1.csv")
    );
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"stepsize": 0.5}"#).unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("--out-dir").arg(tmp.path()).arg("simulate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(run_in(d, &["simulate", "--problem", "nope"]).status.code(), Some(2));
    assert_eq!(run_in(d, &["rmste", "--n", "10"]).status.code(), Some(2));

    let out = run_in(d, &["lyapunov", "--a", "1", "--h", "1.5"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ah < 1 violated"));
    assert_eq!(manifest(d)["exit_code"], 3);

    assert_eq!(run_in(d, &["ded-oscillator", "--t-end", "5", "--grid-points", "11"]).status.code(), Some(0));

    // A regular file where the output directory should be.
    let file = d.join("occupied");
    fs::write(&file, "x").unwrap();
    assert_eq!(run_in(&file, &["ded-oscillator"]).status.code(), Some(1));
}

#[test]
fn manifest_records_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["--svg", "simplex-test", "--n", "500", "--k", "1,2"]);
    assert!(out.status.success());
    let m = manifest(tmp.path());
    assert_eq!(m["command"], "simplex-test");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert!(m["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    let outputs = m["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for o in outputs {
        let bytes = fs::read(tmp.path().join(o["file"].as_str().unwrap())).unwrap();
        assert_eq!(o["sha256"], hex::encode(Sha256::digest(bytes)));
    }
}

#[test]
fn ded_error_starts_at_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["ded-error", "--t-grid", "0,0.1", "--h-grid", "0.001,0.01,0.1"]);
    assert!(out.status.success());
    let rows = read_rows(&tmp.path().join("ded_error.csv"));
    for r in rows.iter().filter(|r| r[0] == 0.0) {
        assert_eq!((r[2], r[3]), (0.0, 0.0));
    }
    // Companion distance under its bound in every row.
    assert!(rows.iter().all(|r| r[3] <= r[4] * (1.0 + 1e-12)));
}
