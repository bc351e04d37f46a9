use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use f3ast_core::harness::checks::{
    check_region_oracle, check_unbiasedness, check_variance_bounds, check_variance_formula, run_all, CheckOutcome,
};
use f3ast_core::harness::plot::emit_plots;
use f3ast_core::harness::{
    csv_files, oracle_report, run_experiment, run_rate_convergence, write_json, ExperimentConfig, Overrides,
    PolicyName, RatesConfig,
};
use f3ast_core::Error;

/// Client-selection simulator for federated learning under intermittent
/// availability.
#[derive(Parser)]
#[command(name = "f3ast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (policy, seed) pair of an experiment config.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run only this policy.
        #[arg(long)]
        policy: Option<PolicyName>,
    },
    /// Selection-only loop: compare the time-averaged r(t) with the oracle
    /// optimum. Without --config, uses the two-client fixture.
    Rates {
        #[command(flatten)]
        common: Common,
    },
    /// Rate-region computations on an enumerable system, plus the
    /// unbiasedness and variance checks.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Render SVG plots from the CSVs in a results directory.
    Plot {
        /// Directory holding `<policy>_seed<n>.csv` files.
        #[arg(long)]
        input: PathBuf,
        /// Where to write the SVGs (defaults to `<input>/plots`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full acceptance suite.
    Verify {
        /// Scratch directory for the determinism runs (a temp dir by default).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compare plots against the SVGs in this directory.
        #[arg(long)]
        golden: Option<PathBuf>,
    },
}

fn load_rates(common: &Common) -> anyhow::Result<RatesConfig> {
    let mut cfg = match &common.config {
        Some(path) => RatesConfig::load(path)?,
        None => RatesConfig::two_client(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(dir) = &common.out {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn save(dir: &Path, name: &str, value: &impl serde::Serialize) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    write_json(&path, value)?;
    Ok(path)
}

fn report(outcomes: &[CheckOutcome]) -> bool {
    for o in outcomes {
        println!("{o}");
    }
    outcomes.iter().all(|o| o.passed)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run { common, policy } => {
            let path = common.config.as_ref().context("run needs --config")?;
            let mut cfg = ExperimentConfig::load(path)?;
            Overrides {
                seed: common.seed,
                output_dir: common.out.clone(),
                policy,
            }
            .apply(&mut cfg);
            let summary = run_experiment(&cfg)?;
            for p in &summary.policies {
                let acc = p.final_window.per_sample_accuracy;
                println!(
                    "{:<8} seeds {:?}: final-window per-sample accuracy {}",
                    p.policy.to_string(),
                    p.seeds,
                    acc.map_or("n/a".into(), |a| format!("{a:.4}"))
                );
            }
            println!("results in {}", cfg.output_dir.display());
            Ok(true)
        }
        Command::Rates { common } => {
            let cfg = load_rates(&common)?;
            let rep = run_rate_convergence(&cfg)?;
            let path = save(&cfg.output_dir, "rates.json", &rep)?;
            println!("r*        = {:?}", rep.r_star);
            println!("mean r(t) = {:?}", rep.r_average);
            println!(
                "sup gap {:.5} (tolerance {}) after {} burn-in rounds: {}",
                rep.sup_gap,
                rep.tolerance,
                rep.burn_in,
                if rep.pass { "PASS" } else { "FAIL" }
            );
            info!("wrote {}", path.display());
            Ok(rep.pass)
        }
        Command::Oracle { common } => {
            let cfg = load_rates(&common)?;
            let rep = oracle_report(&cfg)?;
            let path = save(&cfg.output_dir, "oracle.json", &rep)?;
            println!("r* = {:?}, H(r*) = {:.6}, gap {:.2e}", rep.r_star, rep.h_value, rep.solver_gap);
            println!("r* inside region: {} (distance {:.2e})", rep.r_star_inside, rep.membership_distance);
            println!("wrote {}", path.display());
            let checks = [
                check_unbiasedness(),
                check_variance_formula(),
                check_variance_bounds(),
                check_region_oracle(),
            ];
            Ok(report(&checks) && rep.r_star_inside)
        }
        Command::Plot { input, out } => {
            let files = csv_files(&input)?;
            if files.is_empty() {
                anyhow::bail!("no CSV files in {}", input.display());
            }
            let out = out.unwrap_or_else(|| input.join("plots"));
            for p in emit_plots(&files, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Verify { out, golden } => {
            let scratch;
            let dir = match out {
                Some(d) => d,
                None => {
                    scratch = tempfile::tempdir()?;
                    scratch.path().to_path_buf()
                }
            };
            Ok(report(&run_all(&dir, golden.as_deref())))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) | Some(Error::Parse { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
