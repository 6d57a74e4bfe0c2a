use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TRUTH: &str = r#"{
  "perception": {"alpha_over_beta": 6.5, "v": 0.3, "k": 0.5},
  "spec": {"kind": "so2", "cells": [
    {"subject": "2", "opposing": "S", "tau_zero_scaled": 4.2, "tau_nonzero_scaled": 3.3},
    {"subject": "4", "opposing": "B", "tau_zero_scaled": 5.0, "tau_nonzero_scaled": 3.9}
  ]},
  "gaps": {"family": "exp", "rate": 0.2645},
  "class_mix": [
    {"subject": "2", "opposing": "S", "prob": 0.4},
    {"subject": "4", "opposing": "B", "prob": 0.6}
  ]
}"#;

fn critgap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critgap"))
        .args(args)
        .env_remove("CRITGAP_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = critgap(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let w = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(w.path("truth.json"), TRUTH).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn simulate(&self, name: &str, n: usize, seed: u64) -> PathBuf {
        let out = self.path(name);
        let (n, seed) = (n.to_string(), seed.to_string());
        ok(&["simulate", "--params", s(&self.path("truth.json")), "--n", &n, "--seed", &seed, "-o", s(&out)]);
        out
    }

    fn fit(&self, data: &Path, model: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(&format!("{model}.json"));
        let mut args = vec!["fit", s(data), "--model", model, "--multistart", "2", "-o", s(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        out
    }
}

fn assert_error(out: &Output, code: i32, class: &str) {
    assert_eq!(out.status.code(), Some(code), "{}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{class}]: ")), "{err}");
}

#[test]
fn simulate_is_byte_identical() {
    let w = Workspace::new();
    let a = fs::read(w.simulate("a.csv", 300, 5)).unwrap();
    let b = fs::read(w.simulate("b.csv", 300, 5)).unwrap();
    let c = fs::read(w.simulate("c.csv", 300, 6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let threaded = ok(&["--threads", "3", "simulate", "--params", s(&w.path("truth.json")), "--n", "300", "--seed", "5"]);
    assert_eq!(threaded.as_bytes(), &a[..]);
}

#[test]
fn validate_reports_counts() {
    let w = Workspace::new();
    let data = w.simulate("d.csv", 200, 1);
    let out = ok(&["validate", s(&data)]);
    let all = out.lines().find(|l| l.starts_with("all")).unwrap();
    assert_eq!(all.split_whitespace().nth(1), Some("200"));
    assert!(out.contains("digest "));
}

#[test]
fn data_errors_exit_2() {
    let w = Workspace::new();
    let bad = w.path("bad.csv");
    fs::write(
        &bad,
        "vehicle_id,gap_index,gap_size_s,subject_class,opposing_class,waiting_time_s,rejected_count,accepted\n\
         a,1,3.0,4,B,0,0,1\n\
         a,2,5.0,4,B,3.0,1,1\n",
    )
    .unwrap();
    let out = critgap(&["validate", s(&bad)]);
    assert_error(&out, 2, "data");
    assert!(String::from_utf8_lossy(&out.stderr).contains("row"));
    assert_error(&critgap(&["validate", s(&w.path("missing.csv"))]), 2, "io");
}

#[test]
fn usage_errors_exit_4() {
    let w = Workspace::new();
    let data = w.simulate("d.csv", 50, 1);
    assert_error(&critgap(&["fit", s(&data), "--model", "nope"]), 4, "usage");
    assert_error(&critgap(&["frobnicate"]), 4, "usage");
    assert_error(&critgap(&["--threads", "0", "validate", s(&data)]), 4, "usage");
    assert!(critgap(&["--help"]).status.success());
}

#[test]
fn threads_from_environment() {
    let w = Workspace::new();
    let data = w.simulate("d.csv", 50, 1);
    let out = Command::new(env!("CARGO_BIN_EXE_critgap"))
        .args(["validate", s(&data)])
        .env("CRITGAP_THREADS", "0")
        .output()
        .unwrap();
    assert_error(&out, 4, "usage");
}

#[test]
fn pipeline() {
    let w = Workspace::new();
    let data = w.simulate("d.csv", 400, 2);

    let constant = w.fit(&data, "const", &["--seed", "3"]);
    let first = fs::read(&constant).unwrap();
    let again = w.path("again.json");
    ok(&["--threads", "2", "fit", s(&data), "--model", "const", "--multistart", "2", "--seed", "3", "-o", s(&again)]);
    assert_eq!(first, fs::read(&again).unwrap(), "fit output depends on the run");

    let json: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(json["format_version"], 1);
    assert_eq!(json["model"], "const");

    let so = w.fit(&data, "so", &["--start-from", s(&constant)]);
    let bv = w.fit(&data, "so2", &["--start-from", s(&so), "--bootstrap", "10", "--seed", "4"]);
    let bv_json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&bv).unwrap()).unwrap();
    assert_eq!(bv_json["bootstrap"]["replicates"], 10);

    let lr = ok(&["lrtest", s(&so), s(&bv)]);
    assert!(lr.starts_with("so vs so2: LR "), "{lr}");
    assert!(lr.contains("on 2 df"), "{lr}");
    let reversed = critgap(&["lrtest", s(&bv), s(&so)]);
    assert_error(&reversed, 4, "usage");

    let profile = w.path("profile.csv");
    ok(&["emulator", s(&bv), "--w-grid", "0:6:1.5", "--cell", "4,B", "-o", s(&profile)]);
    let text = fs::read_to_string(&profile).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("conditioning_value,tau_e"));
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 5);
    assert!(values.windows(2).all(|p| p[1] <= p[0]));
    assert_error(&critgap(&["emulator", s(&bv), "--r-grid", "0:4"]), 4, "usage");

    let table = ok(&["emulator", s(&bv)]);
    assert!(table.contains("4,B w=0"));

    let awt = ok(&["awt", s(&constant), s(&data)]);
    assert!(awt.lines().any(|l| l.starts_with("all")), "{awt}");
    let report = w.path("baseline.json");
    let base = ok(&["baseline", s(&data), "--flow", "0.26", "--result", s(&constant), "-o", s(&report)]);
    for m in ["Raff", "Ashworth", "Troutbeck", "Proposed (const)"] {
        assert!(base.contains(m), "{base}");
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["methods"].as_array().unwrap().len(), 4);
}
