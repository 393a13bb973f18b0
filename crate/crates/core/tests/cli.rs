use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cbi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbi")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

const CIR: &str = r#"{"c":0.5,"beta":1.0,"b":0.0}"#;

#[test]
fn estimate_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "x.csv", "k,x\n0,0\n1,1\n2,3\n");
    let out = cbi(&["estimate", "--in", &input]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rho_hat"], 2.0);
    assert_eq!(v["betabar_hat"], 1.0);
    assert_eq!(v["hn_holds"], true);
    assert_eq!(v["n"], 2);
}

#[test]
fn estimate_with_params_adds_scaled_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "x.csv", "k,x\n0,0\n1,1\n2,3\n");
    let params = write(dir.path(), "p.json", r#"{"c":0,"beta":0,"b":0,"nu":[{"z":1,"rate":1}]}"#);
    let out = cbi(&["estimate", "--in", &input, "--params", &params, "--regime", "pure-immigration"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let e = v["scaled_errors"].as_array().unwrap();
    let b = 2f64.ln();
    assert!((e[0].as_f64().unwrap() - 2f64.powf(1.5) * b).abs() < 1e-12);
    assert!((e[1].as_f64().unwrap() - 2f64.sqrt() * (b - 1.0)).abs() < 1e-12);
}

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "p.json", CIR);
    let out_path = dir.path().join("s.csv");
    let out = cbi(&["simulate", "--params", &params, "--n", "50", "--seed", "9", "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), r#"{"seed":9}"#);
    let first = fs::read(&out_path).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 52);
    let again = cbi(&["simulate", "--params", &params, "--n", "50", "--seed", "9", "--out", out_path.to_str().unwrap()]);
    assert!(again.status.success());
    assert_eq!(fs::read(&out_path).unwrap(), first);
    assert!(cbi(&["estimate", "--in", out_path.to_str().unwrap()]).status.success());
}

#[test]
fn random_seed_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "p.json", CIR);
    let out_path = dir.path().join("s.csv");
    let out = cbi(&["simulate", "--params", &params, "--n", "5", "--out", out_path.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["seed"].is_u64());
}

#[test]
fn usage_errors_exit_one_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "p.json", CIR);
    let out_path = dir.path().join("s.csv");
    let out = cbi(&["simulate", "--params", &params, "--n", "5", "--bogus", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_path.exists());

    let bad = write(dir.path(), "bad.json", r#"{"c":-1,"beta":1,"b":0}"#);
    let out = cbi(&["simulate", "--params", &bad, "--n", "5", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("\"rate\""));
    assert!(!out_path.exists());

    let short = write(dir.path(), "short.csv", "k,x\n0,1\n1,2\n");
    assert_eq!(cbi(&["estimate", "--in", &short]).status.code(), Some(1));
}

#[test]
fn numeric_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "p.json", r#"{"c":0.5,"beta":1,"b":0,"mu":[{"z":1,"rate":1}]}"#);
    let out = cbi(&["moments", "--params", &params, "--t", "1", "--q", "8", "--step", "0.5"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn limit_and_moments_output() {
    let dir = tempfile::tempdir().unwrap();
    let params = write(dir.path(), "p.json", CIR);
    let out_path = dir.path().join("l.csv");
    let out = cbi(&["limit", "--params", &params, "--reps", "20", "--grid", "100", "--seed", "1", "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = fs::read_to_string(&out_path).unwrap();
    assert!(text.starts_with("rep,e1,e2\n"));
    assert_eq!(text.lines().count(), 21);

    let out = cbi(&["moments", "--params", &params, "--t", "1", "--q", "2"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // Var X_1 = V0 = βC/2 from X_0 = 0
    assert!((v["centered"][1].as_f64().unwrap() - 0.5).abs() < 1e-6);
    assert!((v["mean"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let out = cbi(&["growth", "--params", &params, "--q", "2", "--n-max", "100"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["violation"], false);
}

#[test]
fn experiment_output_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"params":{"c":0.5,"beta":1.0,"b":0.0},"n_values":[20,40],"replicates":100,
        "grid_points":50,"seed":5,"regime":"general-critical","reference_factor":2}"#;
    let config = write(dir.path(), "cfg.json", cfg);
    let out = dir.path().join("r.json");
    let run = |workers: &str| {
        assert!(cbi(&["experiment", "--config", &config, "--workers", workers, "--out", out.to_str().unwrap()]).status.success());
        (fs::read(&out).unwrap(), fs::read(out.with_extension("csv")).unwrap())
    };
    assert_eq!(run("1"), run("3"));
}
