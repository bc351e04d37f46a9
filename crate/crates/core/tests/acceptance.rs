//! Runs acceptance criteria 1 to 10 and prints one PASS/FAIL line each.
//!
//! Set `F3AST_UPDATE_GOLDEN=1` to rewrite the golden plots before comparing.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use f3ast_core::harness::checks::{determinism_config, run_all};
use f3ast_core::harness::{csv_files, plot::emit_plots, run_experiment};

fn refresh_golden(golden: &Path) {
    let scratch = tempfile::tempdir().expect("temp dir");
    let cfg = determinism_config(scratch.path().to_path_buf());
    run_experiment(&cfg).expect("golden run");
    let files = csv_files(scratch.path()).expect("csv listing");
    emit_plots(&files, golden).expect("golden plots");
}

fn main() -> ExitCode {
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    if std::env::var_os("F3AST_UPDATE_GOLDEN").is_some() {
        refresh_golden(&golden);
    }
    let work = tempfile::tempdir().expect("temp dir");
    let outcomes = run_all(work.path(), Some(&golden));
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
