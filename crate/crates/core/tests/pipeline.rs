use std::path::Path;

use f3ast_core::availability::{AvailabilityKind, AvailabilityParams, CapacitySchedule};
use f3ast_core::data_models::{ClientSizes, DatasetSpec};
use f3ast_core::harness::metrics::CSV_HEADER;
use f3ast_core::harness::{
    read_csv, run_experiment, run_rate_convergence, ExperimentConfig, PolicyName, RatesConfig, SystemSpec,
};

fn small(dir: &Path, kind: AvailabilityKind) -> ExperimentConfig {
    let dataset = DatasetSpec::SyntheticAlpha {
        alpha: 0.5,
        beta: 0.5,
        num_clients: 10,
        sizes: ClientSizes::Fixed { n: 30 },
        dim: 5,
        num_classes: 3,
    };
    let mut cfg = ExperimentConfig::new(dataset, AvailabilityParams::new(kind));
    cfg.capacity = CapacitySchedule::Constant(3);
    cfg.policies = vec![PolicyName::F3ast, PolicyName::Fedavg, PolicyName::Poc];
    cfg.rounds = 25;
    cfg.eval_every = 5;
    cfg.seeds = vec![4, 5];
    cfg.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn policies_see_the_same_availability() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&small(dir.path(), AvailabilityKind::HomeDevices)).unwrap();
    for seed in [4, 5] {
        let tables: Vec<_> = ["f3ast", "fedavg", "poc"]
            .iter()
            .map(|p| read_csv(&dir.path().join(format!("{p}_seed{seed}.csv"))).unwrap())
            .collect();
        assert_eq!(tables[0].num_available, tables[1].num_available);
        assert_eq!(tables[0].num_available, tables[2].num_available);
    }
    let a = read_csv(&dir.path().join("f3ast_seed4.csv")).unwrap();
    let b = read_csv(&dir.path().join("f3ast_seed5.csv")).unwrap();
    assert_ne!(a.num_available, b.num_available);
}

#[test]
fn zero_rounds_write_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), AvailabilityKind::Always);
    cfg.rounds = 0;
    let summary = run_experiment(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("fedavg_seed4.csv")).unwrap();
    assert_eq!(text, format!("{}\n", CSV_HEADER.join(",")));
    assert!(summary.runs.iter().all(|r| r.final_window.per_sample_accuracy.is_none()));
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&small(a.path(), AvailabilityKind::Scarce)).unwrap();
    run_experiment(&small(b.path(), AvailabilityKind::Scarce)).unwrap();
    for name in ["f3ast_seed4.csv", "poc_seed5.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

/// Tail means recomputed with a plain split of the CSV text.
fn tail_mean(csv: &str, column: &str, window: usize) -> Option<f64> {
    let mut lines = csv.lines();
    let idx = lines.next()?.split(',').position(|c| c == column)?;
    let vals: Vec<f64> = lines
        .filter_map(|l| l.split(',').nth(idx).filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()))
        .collect();
    let tail = &vals[vals.len().saturating_sub(window)..];
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

#[test]
fn summary_agrees_with_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), AvailabilityKind::Uneven);
    cfg.summary_window = 3;
    run_experiment(&cfg).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 6);
    for run in runs {
        let csv = std::fs::read_to_string(dir.path().join(run["csv"].as_str().unwrap())).unwrap();
        for metric in ["per_sample_accuracy", "per_sample_loss", "per_user_accuracy", "per_user_loss"] {
            let expect = tail_mean(&csv, metric, 3).unwrap();
            let got = run["final_window"][metric].as_f64().unwrap();
            assert!((expect - got).abs() <= 1e-9, "{metric}: {expect} vs {got}");
        }
    }
    for policy in summary["policies"].as_array().unwrap() {
        let name = policy["policy"].as_str().unwrap();
        let mine: Vec<f64> = runs
            .iter()
            .filter(|r| r["policy"] == name)
            .map(|r| r["final_window"]["per_user_loss"].as_f64().unwrap())
            .collect();
        let mean = mine.iter().sum::<f64>() / mine.len() as f64;
        assert!((policy["final_window"]["per_user_loss"].as_f64().unwrap() - mean).abs() <= 1e-12);
    }
}

#[test]
fn scarce_rounds_can_be_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), AvailabilityKind::Scarce);
    cfg.availability.scarce_q = 0.05;
    cfg.policies = vec![PolicyName::F3ast];
    cfg.seeds = vec![1];
    cfg.rounds = 60;
    let summary = run_experiment(&cfg).unwrap();
    let t = read_csv(&dir.path().join("f3ast_seed1.csv")).unwrap();
    let skipped = t.skipped.iter().filter(|s| **s).count();
    assert!(skipped > 0);
    assert_eq!(summary.runs[0].skipped_rounds, skipped);
    for (s, n) in t.skipped.iter().zip(&t.num_available) {
        if *n == 0 {
            assert!(*s);
        }
    }
}

#[test]
fn invalid_config_lists_every_problem() {
    let text = r#"{
        "dataset": {"kind": "synthetic_alpha", "alpha": -1, "beta": 1},
        "availability": {"kind": "scarce", "scarce_q": 1.5},
        "rounds": 10,
        "beta": 0
    }"#;
    let err = ExperimentConfig::from_json(text, Path::new("bad.json")).unwrap_err().to_string();
    for needle in ["alpha", "scarce_q", "beta"] {
        assert!(err.contains(needle), "{needle} missing from: {err}");
    }
}

fn independent(kind: AvailabilityKind, n: usize, k: usize) -> RatesConfig {
    RatesConfig::new(SystemSpec::Independent {
        num_clients: n,
        availability: AvailabilityParams::new(kind),
        capacity: CapacitySchedule::Constant(k),
    })
}

#[test]
fn full_capacity_drives_rates_to_one() {
    let mut cfg = independent(AvailabilityKind::Always, 4, 5);
    cfg.rounds = 20_000;
    let rep = run_rate_convergence(&cfg).unwrap();
    assert!(rep.r_star.iter().all(|&r| (r - 1.0).abs() < 1e-9));
    assert!(rep.sup_gap <= cfg.beta * 4.0, "{}", rep.sup_gap);
}

#[test]
fn symmetric_scarce_system_learns_symmetric_rates() {
    let cfg = independent(AvailabilityKind::Scarce, 5, 1);
    let rep = run_rate_convergence(&cfg).unwrap();
    assert!(rep.pass, "{rep:?}");
    let spread = rep.r_average.iter().fold(0.0f64, |m, a| m.max((a - rep.r_average[0]).abs()));
    assert!(spread <= 0.02);
    assert!(rep.r_star.iter().all(|&r| (r - rep.r_star[0]).abs() < 1e-6));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        if text.contains("\"system\"") {
            RatesConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        } else {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
        seen += 1;
    }
    assert!(seen >= 4);
}
