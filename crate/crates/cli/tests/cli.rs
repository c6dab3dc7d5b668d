//! End-to-end runs of the `bdmix` binary.

use std::collections::HashMap;
use std::process::{Command, Output};

fn bdmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdmix"))
        .args(args)
        .output()
        .expect("run bdmix")
}

fn rows(out: &Output) -> Vec<HashMap<String, String>> {
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    r.records()
        .map(|rec| {
            header
                .iter()
                .cloned()
                .zip(rec.unwrap().iter().map(str::to_string))
                .collect()
        })
        .collect()
}

fn num(row: &HashMap<String, String>, key: &str) -> f64 {
    row[key]
        .parse()
        .unwrap_or_else(|_| panic!("{key}={}", row[key]))
}

fn error_record(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr record");
    serde_json::from_str(last).unwrap()
}

#[test]
fn mm1_gap_example() {
    let out = bdmix(&["gap", "--n", "1", "--lambda", "0.25"]);
    assert!(out.status.success());
    let r = rows(&out);
    assert_eq!(r.len(), 1);
    assert!((num(&r[0], "gap") - 0.25).abs() <= 1e-6);
    assert!((num(&r[0], "bound_rate") - 0.25).abs() <= 1e-12);
    assert_eq!(r[0]["valid"], "true");
}

#[test]
fn transient_example_decays_monotonically() {
    let out = bdmix(&[
        "transient",
        "--n",
        "4",
        "--alpha",
        "1",
        "--init",
        "dirac:0",
        "--t-grid",
        "0:20:0.5",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = rows(&out);
    assert_eq!(r.len(), 41);
    let chis: Vec<f64> = r.iter().map(|row| num(row, "chi")).collect();
    for w in chis.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
    }
    assert!(r.iter().all(|row| row["valid"] == "true"));
    assert_eq!(num(&r[40], "t"), 20.0);
}

#[test]
fn sweep_table1_example_is_valid() {
    let out = bdmix(&[
        "sweep",
        "--table1",
        "--alphas",
        "0.25,0.5,0.75,1",
        "--ns",
        "110,500,2000",
    ]);
    assert!(out.status.success());
    let r = rows(&out);
    assert_eq!(r.len(), 12);
    for row in &r {
        assert_eq!(row["valid"], "true", "{row:?}");
        assert!(num(row, "bound_rate") <= num(row, "gap_oracle") + 1e-9);
        assert!(!row["lyapunov"].is_empty() && !row["finite_set"].is_empty());
    }
    let regimes: Vec<&str> = r.iter().take(4).map(|row| row["regime"].as_str()).collect();
    assert_eq!(regimes, ["sub_hw", "halfin_whitt", "super_hw", "super_nds"]);
}

#[test]
fn sweep_output_independent_of_job_count() {
    let a = bdmix(&["sweep", "--table1", "--jobs", "1"]);
    let b = bdmix(&["sweep", "--table1", "--jobs", "3"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn json_output_has_meta_and_rows() {
    let out = bdmix(&[
        "stationary",
        "--n",
        "2",
        "--lambda",
        "1",
        "--qmax",
        "4",
        "--format",
        "json",
        "--seed",
        "5",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["meta"]["seed"], 5);
    assert_eq!(v["meta"]["flags"][0], "stationary");
    assert!(v["meta"]["version"].is_string());
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    let mass: f64 = rows.iter().map(|r| r["prob"].as_f64().unwrap()).sum();
    // Infinite-chain law on the window: the remainder is the geometric tail.
    assert!(mass < 1.0 && mass > 0.95);
    for r in rows {
        let (p, lp) = (r["prob"].as_f64().unwrap(), r["log_prob"].as_f64().unwrap());
        assert!((p.ln() - lp).abs() < 1e-14);
    }
}

#[test]
fn out_flag_writes_file() {
    let path = std::env::temp_dir().join(format!("bdmix-cli-test-{}.csv", std::process::id()));
    let out = bdmix(&[
        "gap",
        "--n",
        "inf",
        "--lambda",
        "4",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert!(text.starts_with("n,alpha,lambda"));
    assert!(text.lines().nth(1).unwrap().starts_with("inf,"));
}

#[test]
fn drift_and_certify_report_passing_certificates() {
    let d = bdmix(&["drift", "--n", "64", "--alpha", "0.75"]);
    assert!(d.status.success());
    assert_eq!(rows(&d)[0]["pass"], "true");
    let c = bdmix(&[
        "certify",
        "--n",
        "110",
        "--alpha",
        "0.75",
        "--method",
        "stitching",
        "--tests",
        "50",
    ]);
    assert!(c.status.success(), "{}", String::from_utf8_lossy(&c.stderr));
    let r = rows(&c);
    assert!(num(&r[0], "mixing_rate") <= num(&r[0], "gap_oracle"));
}

#[test]
fn bounds_rows_are_valid() {
    let out = bdmix(&["bounds", "--n", "4", "--alpha", "1", "--t-grid", "1:10:4.5"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = rows(&out);
    assert!(r
        .iter()
        .any(|row| row["quantity"] == "idle" && row["direction"] == "upper"));
    assert!(r.iter().all(|row| row["valid"] == "true"));
}

#[test]
fn unstable_queue_exits_with_flag_error() {
    let out = bdmix(&["gap", "--n", "4", "--lambda", "5"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_record(&out);
    assert_eq!(e["error"], "unstable");
    assert_eq!(e["exit_code"], 2);
}

#[test]
fn bad_flags_exit_with_code_two() {
    for args in [
        vec!["gap", "--n", "4"],
        vec!["gap", "--n", "4", "--alpha", "1", "--lambda", "2"],
        vec!["gap", "--n", "four", "--alpha", "1"],
        vec!["transient", "--n", "4", "--alpha", "1", "--t-grid", "5:1:1"],
        vec![
            "transient",
            "--n",
            "4",
            "--alpha",
            "1",
            "--init",
            "poisson:3",
        ],
        vec!["frobnicate"],
    ] {
        let out = bdmix(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(error_record(&out)["exit_code"], 2, "{args:?}");
    }
}
