use std::process::{Command, Output};

use serde_json::Value;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occupancy-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&stdout(&lab(args))).unwrap()
}

const GEOM: &str = r#"{"family":"geometric","q":0.5}"#;
const POWER: &str = r#"{"family":"power_law","exponent":2}"#;

#[test]
fn moments_rows_and_preamble() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("geom.json");
    std::fs::write(&spec, GEOM).unwrap();
    let out = stdout(&lab(&["moments", "--spec", spec.to_str().unwrap(), "--r", "1,2", "--t-grid", "1:2:20"]));
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].starts_with("# occupancy-lab "));
    assert!(lines.iter().any(|l| l.starts_with("# config: ") && l.contains("\"geometric\"")));
    let data: Vec<&str> = lines.iter().copied().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data[0], "t,r,phi,var,cert");
    assert_eq!(data.len() - 1, 40);
    // Φ_1(1) = Σ p_j e^{-p_j} for the geometric law, checked at the first row
    let phi1: f64 = (1..200).map(|j| 0.5f64.powi(j) * (-(0.5f64.powi(j))).exp()).sum();
    let first: Vec<&str> = data[1].split(',').collect();
    assert_eq!(first[..2], ["1e0", "1"]);
    let cert: f64 = first[4].parse().unwrap();
    assert!((first[2].parse::<f64>().unwrap() - phi1).abs() <= cert + 1e-15);
}

#[test]
fn json_envelope_has_versions() {
    let v = json(&["limit-cov", "--alpha", "0.5", "--format", "json"]);
    assert_eq!(v["tool"], "occupancy-lab");
    assert!(v["version"].is_string() && v["library_version"].is_string());
    assert_eq!(v["config"]["R"], serde_json::json!([1, 2, 3]));
    let s12 = v["result"]["raw"][0][1].as_f64().unwrap();
    assert!((s12 + 0.058749).abs() < 1e-6);
}

#[test]
fn reproduce_bgy() {
    let v = json(&["reproduce", "bgy-ex2"]);
    assert_eq!(v["result"]["verdict"]["regime"], "regime2");
    assert_eq!(v["result"]["verdict"]["r0"], 1);
}

#[test]
fn reproduce_karlin_and_factorial() {
    let v = json(&["reproduce", "karlin-ex1"]);
    assert_eq!(v["result"]["verdict"]["regime"], "regime3");
    let v = json(&["reproduce", "factorial-ex3"]);
    let pairs = v["result"]["pairs"].as_array().unwrap();
    assert!(!pairs.is_empty());
    assert!(pairs.iter().all(|p| p["r"] == 1 && p["verdict"] != "oscillating"));
}

#[test]
fn reproduce_genex_series() {
    let v = json(&["reproduce", "genex", "--beta", "0.5", "--alpha", "1", "--r", "2"]);
    let res = &v["result"];
    assert_eq!(res["boundary_product"].as_f64().unwrap(), 1.0);
    let last: Vec<u64> = res["largest_representable"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    assert_eq!(last.len(), 3);
    for row in res["rows"].as_array().unwrap() {
        if last.contains(&row["block"].as_u64().unwrap()) {
            assert!(row["phi_r_scale"].as_f64().unwrap() > 10.0);
            assert!(row["phi_r_gap"].as_f64().unwrap() < 0.5);
        }
    }
}

#[test]
fn simulate_reports_degenerate_variance() {
    let v = json(&[
        "simulate",
        "--spec",
        r#"{"family":"explicit","p":[1.0]}"#,
        "--R",
        "1,20",
        "--t",
        "1",
        "--reps",
        "10",
    ]);
    let o = &v["result"][0];
    assert_eq!(o["status"], "degenerate_variance");
    assert_eq!(o["r"], 20);
}

#[test]
fn simulate_small_run() {
    let v = json(&["simulate", "--spec", POWER, "--R", "1,2", "--n", "500", "--reps", "200", "--seed", "3"]);
    let o = &v["result"][0];
    assert_eq!(o["status"], "ok");
    assert_eq!(o["simulation"]["conservation_failures"], 0);
    assert_eq!(o["normality"]["ks"].as_array().unwrap().len(), 2);
    assert!(o["simulation"].get("standardized").is_none());
}

#[test]
fn depoisson_inapplicable_is_not_an_error() {
    let out = stdout(&lab(&["depoisson", "--spec", GEOM, "--n", "3", "--m", "1000"]));
    let row = out.lines().last().unwrap();
    assert!(row.ends_with(",false"), "{row}");
}

#[test]
fn out_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let args = ["depoisson", "--spec", POWER, "--n", "1e4,1e5"];
    let direct = stdout(&lab(&args));
    let mut with_out = args.to_vec();
    with_out.extend(["--out", path.to_str().unwrap()]);
    assert!(stdout(&lab(&with_out)).is_empty());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), direct);
}

#[test]
fn config_errors_exit_2() {
    let cases: Vec<Vec<&str>> = vec![
        vec!["moments", "--spec", "/nonexistent/spec.json", "--t-grid", "1:2:3"],
        vec!["moments", "--spec", GEOM, "--t-grid", "1:0.5:3"],
        vec!["moments", "--spec", r#"{"family":"geometric","q":2}"#, "--t-grid", "1:2:3"],
        vec!["moments", "--spec", r#"{"family":"nope"}"#, "--t-grid", "1:2:3"],
        vec!["moments", "--spec", GEOM, "--r", "0", "--t-grid", "1:2:3"],
        vec!["classify", "--spec", GEOM, "--t-grid", "1:2:8"],
        vec!["limit-cov", "--alpha", "1.5"],
        vec!["simulate", "--spec", GEOM, "--reps", "10"],
        vec!["simulate", "--spec", r#"{"family":"explicit","p":[0.3,0.3]}"#, "--n", "5"],
        vec!["depoisson", "--spec", GEOM, "--n", "2.5"],
        vec!["depoisson", "--spec", GEOM, "--n", "10", "--out", "/nonexistent/dir/x.csv"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = lab(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn bad_thread_setting_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_occupancy-lab"))
        .args(["limit-cov", "--alpha", "0.5"])
        .env("OCCUPANCY_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_1() {
    // the head of a power law at t = 2^62 needs more terms than the budget
    let o = lab(&["moments", "--spec", POWER, "--t-grid", "4.6e18:2:1"]);
    assert_eq!(o.status.code(), Some(1));
}
