use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clearing_core::fixtures::*;
use clearing_core::io::instance_to_json;
use clearing_core::BatchInstance;
use serde_json::Value;
use tempfile::TempDir;

fn clearing(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clearing")).args(args).output().expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn write_instance(dir: &TempDir, name: &str, inst: &BatchInstance) -> PathBuf {
    write(dir, name, &instance_to_json(inst).unwrap().to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn reference_solve_of_lmsr_instance() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(&dir, "lmsr.json", &lmsr_instance());
    let sol = stdout_json(&clearing(&["solve", s(&inst), "--solver", "reference"]));
    assert_eq!(sol["solver"], "reference");
    let a = sol["prices"]["A"].as_f64().unwrap();
    let b = sol["prices"]["B"].as_f64().unwrap();
    assert!((a - 1.0).abs() < 1e-10 && (b - 2.0).abs() < 1e-9, "prices {a} {b}");
    let sold = -sol["trades"][0]["delta"]["A"].as_f64().unwrap();
    assert!((sold - 2.0 / 3.0 * std::f64::consts::LN_2).abs() < 1e-9, "sold {sold}");
    assert!(sol["verifier_report"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn solution_round_trips_through_verify() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(&dir, "inst.json", &two_products_instance());
    let out = clearing(&["solve", s(&inst)]);
    let solved = stdout_json(&out);
    let sol = write(&dir, "sol.json", &String::from_utf8(out.stdout).unwrap());
    let verified = clearing(&["verify", s(&inst), s(&sol), "--tol", "1e-7"]);
    assert!(verified.status.success(), "stderr: {}", String::from_utf8_lossy(&verified.stderr));
    let table = String::from_utf8(verified.stdout).unwrap();
    let rows: Vec<(String, bool)> = table
        .lines()
        .skip(1)
        .map(|l| {
            let cols: Vec<&str> = l.split_whitespace().collect();
            (cols[0].to_string(), cols[1] == "pass")
        })
        .collect();
    let expected: Vec<(String, bool)> =
        solved["verifier_report"].as_array().unwrap().iter().map(|c| (c["name"].as_str().unwrap().to_string(), c["passed"].as_bool().unwrap())).collect();
    assert_eq!(rows, expected);
}

#[test]
fn tampered_solution_fails_verification() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(&dir, "inst.json", &two_products_instance());
    let mut sol = stdout_json(&clearing(&["solve", s(&inst)]));
    let a = sol["trades"][0]["delta"]["A"].as_f64().unwrap();
    sol["trades"][0]["delta"]["A"] = serde_json::json!(a + 1.0);
    let path = write(&dir, "bad.json", &sol.to_string());
    let out = clearing(&["verify", s(&inst), s(&path)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn rational_flag_reports_exact_fractions() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(&dir, "cp.json", &lone_product_instance());
    let sol = stdout_json(&clearing(&["solve", s(&inst), "--solver", "convex", "--rational"]));
    let prices = sol["rational"]["prices"].as_object().expect("rational prices");
    for (asset, q) in prices {
        let num: i64 = q["num"].as_str().unwrap().parse().unwrap();
        let den: i64 = q["den"].as_str().unwrap().parse().unwrap();
        let float = sol["prices"][asset].as_f64().unwrap();
        assert!(den > 0 && den < 1_000_000, "{asset}: {num}/{den}");
        assert!((num as f64 / den as f64 - float).abs() < 1e-9);
    }
}

#[test]
fn malformed_input_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let garbage = write(&dir, "garbage.json", "{ not json");
    assert_eq!(clearing(&["solve", s(&garbage)]).status.code(), Some(2));
    let missing = dir.path().join("absent.json");
    assert_eq!(clearing(&["solve", s(&missing)]).status.code(), Some(2));
    let same_asset = r#"{"assets":["A","B"],"participants":[{"type":"limit_sell","sell":"A","buy":"A","amount":1,"min_price":1}]}"#;
    let invalid = write(&dir, "invalid.json", same_asset);
    let out = clearing(&["solve", s(&invalid)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn density_writes_csv() {
    let dir = TempDir::new().unwrap();
    let inst = write_instance(&dir, "cp.json", &lone_product_instance());
    let csv = dir.path().join("density.csv");
    let out = clearing(&["density", s(&inst), "--cfmm", "m1", "--out", s(&csv), "--points", "20"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("direction,rate,cumulative,marginal"));
    assert_eq!(lines.count(), 40);
}

#[test]
fn sequence_reports_rates_per_batch() {
    let dir = TempDir::new().unwrap();
    let first = instance_to_json(&lmsr_instance()).unwrap();
    let second = serde_json::json!({ "assets": ["A", "B"], "participants": [{ "type": "cfmm_ref", "id": "m1" }] });
    let seq = write(&dir, "seq.json", &Value::Array(vec![first, second]).to_string());
    let rates = dir.path().join("rates.csv");
    let out = clearing(&["sequence", s(&seq), "--rates", s(&rates)]);
    stdout_json(&out);
    let text = fs::read_to_string(&rates).unwrap();
    assert_eq!(text.lines().count(), 3);
}
