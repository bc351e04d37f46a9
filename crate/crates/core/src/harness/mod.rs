//! Experiment driver: wires datasets, availability, policies and training,
//! writes per-run CSVs and summaries, and runs the selection-only rate
//! check and the oracle report.

pub mod checks;
pub mod config;
pub mod metrics;
pub mod plot;

use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::availability::{
    two_client_example, AvailabilityModel, ConfigurationProcess, EnumeratedProcess, IndependentProcess,
};
use crate::data_models::{FederatedDataset, GlmModel};
use crate::error::{Error, Result};
use crate::fedtrain::{ModelParams, Policy, ServerOptimizer, Simulation};
use crate::rate_region::{
    membership, optimal_policy, optimal_rate, selection_covariance, variance_bounds, ConfigurationDistribution,
    RateRegionModel,
};
use crate::rng::{SeedStreams, Stream};
use crate::selection::{f3ast_select, HObjective, ParticipationRate};

pub use config::{
    ExperimentConfig, ModelConfig, Overrides, PocConfig, PolicyName, RatesConfig, ServerOptimizerConfig, SystemSpec,
};
pub use metrics::{format_sig9, read_csv, render_csv, MetricsTable};

/// Everything drawn from the data and availability-parameter streams of one
/// seed. Shared by every policy so runs are paired.
pub struct SeedSetup {
    pub seed: u64,
    pub dataset: FederatedDataset,
    pub availability: AvailabilityModel,
}

pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedSetup> {
    let streams = SeedStreams::new(seed);
    let dataset = cfg
        .dataset
        .generate(cfg.validation_fraction, &mut streams.stream(Stream::Data))?;
    let availability = AvailabilityModel::build(
        cfg.availability.clone(),
        dataset.weights(),
        &mut streams.stream(Stream::AvailabilityParams),
    )?;
    Ok(SeedSetup {
        seed,
        dataset,
        availability,
    })
}

fn build_policy(cfg: &ExperimentConfig, name: PolicyName, setup: &SeedSetup, process: &dyn ConfigurationProcess) -> Result<Policy> {
    let p = setup.dataset.weights().to_vec();
    let n = p.len();
    Ok(match name {
        PolicyName::F3ast => {
            let r0 = cfg.r_init.unwrap_or(1.0 / n as f64).max(cfg.r_min);
            Policy::F3ast {
                obj: HObjective::new(p, cfg.correlation)?,
                rate: ParticipationRate::with_initial(vec![r0; n], cfg.beta, cfg.r_min)?,
            }
        }
        PolicyName::Fedavg => Policy::FedAvg,
        PolicyName::Poc => Policy::PowerOfChoice {
            d: cfg.poc.d,
            m: cfg.poc.m,
        },
        PolicyName::Fixed => {
            let region = RateRegionModel::new(process.stationary_distribution()?);
            let (table, opt) = optimal_policy(&region, &HObjective::new(p, cfg.correlation)?, 1e-9)?;
            if !opt.excluded.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "fixed policy cannot serve never-available clients {:?}",
                    opt.excluded
                )));
            }
            Policy::Fixed {
                table,
                rates: opt.rates,
            }
        }
    })
}

/// Runs one (policy, seed) pair and returns its round records.
pub fn run_single(cfg: &ExperimentConfig, setup: &SeedSetup, name: PolicyName) -> Result<Vec<crate::fedtrain::RoundRecord>> {
    let process = IndependentProcess::new(setup.availability.clone(), cfg.capacity.clone());
    let policy = build_policy(cfg, name, setup, &process)?;
    let model = GlmModel::for_dataset(&setup.dataset, cfg.model.l2, cfg.model.intercept);
    let optimizer = match cfg.server_optimizer {
        ServerOptimizerConfig::Sgd => ServerOptimizer::Sgd,
        ServerOptimizerConfig::Adam(a) => ServerOptimizer::adam(a, model.num_params()),
    };
    let mut sim = Simulation::new(
        &setup.dataset,
        model,
        ModelParams::zeros(model.num_params()),
        optimizer,
        policy,
        cfg.training(),
        Box::new(process),
        SeedStreams::new(setup.seed),
    )?;
    sim.run(cfg.rounds)
}

pub fn csv_name(policy: PolicyName, seed: u64) -> String {
    format!("{policy}_seed{seed}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowMeans {
    pub per_sample_accuracy: Option<f64>,
    pub per_sample_loss: Option<f64>,
    pub per_user_accuracy: Option<f64>,
    pub per_user_loss: Option<f64>,
}

impl WindowMeans {
    pub fn from_table(t: &MetricsTable, window: usize) -> Self {
        Self {
            per_sample_accuracy: t.tail_mean("per_sample_accuracy", window),
            per_sample_loss: t.tail_mean("per_sample_loss", window),
            per_user_accuracy: t.tail_mean("per_user_accuracy", window),
            per_user_loss: t.tail_mean("per_user_loss", window),
        }
    }

    fn mean(items: &[&WindowMeans]) -> Self {
        let avg = |f: fn(&WindowMeans) -> Option<f64>| {
            let v: Vec<f64> = items.iter().filter_map(|m| f(m)).collect();
            (!v.is_empty() && v.len() == items.len()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Self {
            per_sample_accuracy: avg(|m| m.per_sample_accuracy),
            per_sample_loss: avg(|m| m.per_sample_loss),
            per_user_accuracy: avg(|m| m.per_user_accuracy),
            per_user_loss: avg(|m| m.per_user_loss),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub policy: PolicyName,
    pub seed: u64,
    pub csv: String,
    pub rounds: usize,
    pub evaluated_rounds: usize,
    pub skipped_rounds: usize,
    pub final_window: WindowMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub policy: PolicyName,
    pub seeds: Vec<u64>,
    /// Seed means of the final-window averages.
    pub final_window: WindowMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub rounds: usize,
    pub window: usize,
    pub runs: Vec<RunSummary>,
    pub policies: Vec<PolicySummary>,
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Runs every (policy, seed) pair, writes one CSV each plus `summary.json`
/// into the output directory. Summary values are recomputed from the
/// written CSV text so they agree with any independent reader.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let setups = cfg
        .seeds
        .par_iter()
        .map(|&s| prepare_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(&SeedSetup, PolicyName)> = setups
        .iter()
        .flat_map(|s| cfg.policies.iter().map(move |&p| (s, p)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(setup, policy)| {
            info!("running {policy} seed {}", setup.seed);
            let records = run_single(cfg, setup, policy)?;
            let name = csv_name(policy, setup.seed);
            let path = dir.join(&name);
            let text = render_csv(&records);
            std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            let table = metrics::parse_csv(&text, &path)?;
            Ok(RunSummary {
                policy,
                seed: setup.seed,
                csv: name,
                rounds: records.len(),
                evaluated_rounds: table.evaluated_rounds(),
                skipped_rounds: records.iter().filter(|r| r.skipped).count(),
                final_window: WindowMeans::from_table(&table, cfg.summary_window),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let policies = cfg
        .policies
        .iter()
        .map(|&policy| {
            let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.policy == policy).collect();
            PolicySummary {
                policy,
                seeds: mine.iter().map(|r| r.seed).collect(),
                final_window: WindowMeans::mean(&mine.iter().map(|r| &r.final_window).collect::<Vec<_>>()),
            }
        })
        .collect();
    let summary = ExperimentSummary {
        rounds: cfg.rounds,
        window: cfg.summary_window,
        runs,
        policies,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The configuration process and its exact stationary law for a rate
/// config.
pub fn build_system(cfg: &RatesConfig) -> Result<(Box<dyn ConfigurationProcess>, ConfigurationDistribution)> {
    match &cfg.system {
        SystemSpec::TwoClient => {
            let dist = two_client_example();
            Ok((Box::new(EnumeratedProcess::new(dist.clone())), dist))
        }
        SystemSpec::Independent {
            num_clients,
            availability,
            capacity,
        } => {
            let streams = SeedStreams::new(cfg.seed);
            let p = cfg.weights();
            debug_assert_eq!(p.len(), *num_clients);
            let model = AvailabilityModel::build(availability.clone(), &p, &mut streams.stream(Stream::AvailabilityParams))?;
            let process = IndependentProcess::new(model, capacity.clone());
            let dist = process.stationary_distribution()?;
            Ok((Box::new(process), dist))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub rounds: usize,
    pub burn_in: usize,
    pub beta: f64,
    /// Minimizer of `H` over the achievable region.
    pub r_star: Vec<f64>,
    pub solver_gap: f64,
    /// Time average of `r(t)` over the rounds after burn-in.
    pub r_average: Vec<f64>,
    /// Selection frequency over the same rounds.
    pub empirical_rate: Vec<f64>,
    pub sup_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Runs only the F3AST selection loop and compares the post-burn-in
/// time-averaged `r(t)` with the oracle minimizer.
pub fn run_rate_convergence(cfg: &RatesConfig) -> Result<RateReport> {
    cfg.validate()?;
    let (mut process, dist) = build_system(cfg)?;
    let p = cfg.weights();
    let obj = HObjective::new(p, cfg.correlation)?;
    let opt = optimal_rate(&RateRegionModel::new(dist), &obj, 1e-10)?;
    let n = process.num_clients();
    let streams = SeedStreams::new(cfg.seed);
    let mut rng = streams.stream(Stream::Availability);
    let mut rate = ParticipationRate::uniform(n, cfg.beta, cfg.r_min)?;
    let burn_in = cfg.burn_in();
    let mut sum = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for t in 0..cfg.rounds {
        let config = process.sample(t, &mut rng);
        let sel = f3ast_select(&obj, &rate, &config)?.selected;
        rate.smooth_update(&sel);
        if t >= burn_in {
            for (s, r) in sum.iter_mut().zip(rate.rates()) {
                *s += r;
            }
            for c in &sel {
                counts[c.0] += 1;
            }
        }
    }
    let kept = (cfg.rounds - burn_in) as f64;
    let r_average: Vec<f64> = sum.iter().map(|s| s / kept).collect();
    let sup_gap = r_average
        .iter()
        .zip(&opt.rates)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(RateReport {
        rounds: cfg.rounds,
        burn_in,
        beta: cfg.beta,
        r_star: opt.rates,
        solver_gap: opt.gap,
        empirical_rate: counts.iter().map(|&c| c as f64 / kept).collect(),
        r_average,
        sup_gap,
        tolerance: cfg.tolerance,
        pass: sup_gap <= cfg.tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub num_clients: usize,
    pub num_configurations: usize,
    pub availability_marginals: Vec<f64>,
    pub weights: Vec<f64>,
    pub r_star: Vec<f64>,
    pub h_value: f64,
    pub solver_gap: f64,
    pub iterations: usize,
    pub excluded: Vec<usize>,
    /// Distance from `r*` to the region, as certified by the membership test.
    pub membership_distance: f64,
    pub r_star_inside: bool,
    /// Exact selection covariance of a static policy achieving `r*`.
    pub covariance: Vec<Vec<f64>>,
    /// `Sigma` diagonal minus `r (1 - r)`, largest magnitude.
    pub covariance_diagonal_error: f64,
    /// Variance bounds at `r*` for `E = 1`, `G = 1`.
    pub general_bound: f64,
    pub uncorrelated_bound: f64,
}

/// Oracle computations on an enumerable system.
pub fn oracle_report(cfg: &RatesConfig) -> Result<OracleReport> {
    cfg.validate()?;
    let (_, dist) = build_system(cfg)?;
    let p = cfg.weights();
    let region = RateRegionModel::new(dist.clone());
    let obj = HObjective::new(p.clone(), cfg.correlation)?;
    let (table, opt) = optimal_policy(&region, &obj, 1e-10)?;
    let member = membership(&region, &opt.rates, 1e-6)?;
    let cov = selection_covariance(&region, &table)?;
    let diag_err = (0..cov.rates.len())
        .map(|k| (cov.sigma[k][k] - cov.rates[k] * (1.0 - cov.rates[k])).abs())
        .fold(0.0, f64::max);
    let positive: Vec<f64> = opt.rates.iter().map(|&r| r.max(f64::MIN_POSITIVE)).collect();
    let bounds = variance_bounds(&p, &positive, 1, 1.0)?;
    Ok(OracleReport {
        num_clients: dist.num_clients(),
        num_configurations: dist.outcomes().len(),
        availability_marginals: dist.availability_marginals(),
        weights: p,
        h_value: opt.value,
        solver_gap: opt.gap,
        iterations: opt.iterations,
        excluded: opt.excluded.iter().map(|c| c.0).collect(),
        membership_distance: member.distance_upper,
        r_star_inside: member.inside,
        r_star: opt.rates,
        covariance: cov.sigma,
        covariance_diagonal_error: diag_err,
        general_bound: bounds.general,
        uncorrelated_bound: bounds.uncorrelated,
    })
}

/// CSV paths in a results directory, sorted by name.
pub fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
