use std::path::Path;
use std::process::{Command, Output};

fn f3ast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_f3ast")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{
  "dataset": {"kind": "synthetic_alpha", "alpha": 1, "beta": 1, "num_clients": 8,
              "sizes": {"rule": "fixed", "n": 20}, "dim": 4, "num_classes": 3},
  "availability": {"kind": "home_devices"},
  "capacity": {"constant": 2},
  "policies": ["f3ast", "fedavg"],
  "rounds": 12,
  "eval_every": 3,
  "seeds": [0, 1]
}"#;

#[test]
fn run_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL);
    let out = dir.path().join("res");
    let o = f3ast(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "7", "--policy", "f3ast"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(names.contains(&"f3ast_seed7.csv".to_string()) && names.contains(&"summary.json".to_string()));
    assert_eq!(names.len(), 2);

    let o = f3ast(&["plot", "--input", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(out.join("plots/per_sample_accuracy.svg").exists());
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", &SMALL.replace("\"rounds\": 12", "\"rounds\": 12, \"bogus\": 1"));
    let o = f3ast(&["run", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    let syntax = write(dir.path(), "syntax.json", "{\n  \"rounds\": ,\n}");
    let o = f3ast(&["run", "--config", &syntax]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"), "{}", String::from_utf8_lossy(&o.stderr));

    let o = f3ast(&["run", "--config", &dir.path().join("missing.json").to_string_lossy()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn rates_on_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = f3ast(&["rates", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("rates.json")).unwrap()).unwrap();
    assert!((rep["r_star"][0].as_f64().unwrap() - 0.375).abs() < 1e-6);
    assert!(rep["pass"].as_bool().unwrap());
}

#[test]
fn oracle_on_independent_system() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "o.json",
        r#"{"system": {"kind": "independent", "num_clients": 4,
                       "availability": {"kind": "scarce", "scarce_q": 0.4},
                       "capacity": {"constant": 2}},
            "rounds": 20000}"#,
    );
    let o = f3ast(&["oracle", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("oracle.json")).unwrap()).unwrap();
    let r: Vec<f64> = rep["r_star"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(r.len(), 4);
    assert!(r.iter().all(|&x| (x - r[0]).abs() < 1e-6));
}
