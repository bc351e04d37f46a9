//! Acceptance checks 1 to 10. Each check builds its own fixture, runs it and
//! reports what it measured; `run_all` is what `f3ast verify` and the
//! `acceptance` test target call.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, PolicyName, RatesConfig};
use super::plot::emit_plots;
use super::{csv_files, prepare_seed, run_experiment, run_rate_convergence, run_single};
use crate::availability::{
    independent_distribution, two_client_example, AvailabilityKind, AvailabilityModel, AvailabilityParams,
    CapacitySchedule, ClientId, ConfigurationProcess, ConfigurationSample, EnumeratedProcess, IndependentProcess,
};
use crate::data_models::{
    least_squares_curvature, normal_vec, ridge_optimum, ClientSizes, DatasetSpec, GlmModel, IidTask, ModelKind,
    Samples,
};
use crate::error::{Error, Result};
use crate::fedtrain::{
    aggregate_debias_with, client_local_sgd, ClientUpdate, LearningRateSchedule, ModelParams, Policy,
    ServerOptimizer, Simulation, TrainingConfig,
};
use crate::rate_region::{
    aggregate_moments, greedy_policy_table, importance_rows, membership, optimal_policy, optimal_rate,
    rate_of_policy, sampling_variance_exact, selection_covariance, variance_bounds, RateRegionModel,
};
use crate::rng::{SeedStreams, Stream, StreamRng};
use crate::selection::{f3ast_select, fixed_policy_select, CorrelationMode, HObjective, ParticipationRate, PolicyTable};

/// Result of one acceptance check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {:<24} {} ({}) [{:.2}s]",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail,
            self.seconds
        )
    }
}

fn timed(id: u8, name: &'static str, budget: Option<f64>, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let res = f();
    let seconds = start.elapsed().as_secs_f64();
    let (mut passed, mut detail) = match res {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(b) = budget {
        if seconds > b {
            passed = false;
            detail.push_str(&format!("; over the {b:.0}s budget"));
        }
    }
    CheckOutcome {
        id,
        name,
        passed,
        detail,
        seconds,
    }
}

fn rng(seed: u64) -> StreamRng {
    SeedStreams::new(seed).stream(Stream::Policy)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_simplex(n: usize, rng: &mut StreamRng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// A policy putting random positive mass on every feasible set of every
/// configuration.
pub fn random_table(model: &RateRegionModel, rng: &mut StreamRng) -> Result<PolicyTable> {
    let mut table = PolicyTable::new();
    for (i, o) in model.distribution().outcomes().iter().enumerate() {
        let sets = model.feasible_sets(i);
        let w = random_simplex(sets.len(), rng);
        table.insert(o.key(), sets.into_iter().zip(w).collect())?;
    }
    Ok(table)
}

fn random_independent(n: usize, rng: &mut StreamRng) -> Result<RateRegionModel> {
    let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.95)).collect();
    let cap = rng.random_range(1..=n);
    Ok(RateRegionModel::new(independent_distribution(&q, &CapacitySchedule::Constant(cap))?))
}

// ---------------------------------------------------------------- 1

pub fn check_rate_convergence() -> CheckOutcome {
    timed(1, "rate convergence", Some(10.0), || {
        let cfg = RatesConfig::two_client();
        let rep = run_rate_convergence(&cfg)?;
        let oracle_err = (rep.r_star[0] - 0.375).abs().max((rep.r_star[1] - 0.5).abs());
        Ok((
            rep.pass && oracle_err <= 1e-6,
            format!(
                "r* = ({:.6}, {:.6}), time-averaged r = ({:.4}, {:.4}), sup gap {:.4} <= {}",
                rep.r_star[0], rep.r_star[1], rep.r_average[0], rep.r_average[1], rep.sup_gap, rep.tolerance
            ),
        ))
    })
}

// ---------------------------------------------------------------- 2

fn exact_bias(model: &RateRegionModel, table: &PolicyTable, p: &[f64], rng: &mut StreamRng) -> Result<f64> {
    let r = rate_of_policy(model, table)?;
    let updates: Vec<Vec<f64>> = (0..model.num_clients()).map(|_| normal_vec(3, 1.0, rng)).collect();
    let m = aggregate_moments(model, table, p, &r, &updates)?;
    let diff: Vec<f64> = m.mean.iter().zip(&m.full_participation).map(|(a, b)| a - b).collect();
    Ok(norm(&diff))
}

pub fn check_unbiasedness() -> CheckOutcome {
    timed(2, "unbiasedness", None, || {
        let mut rng = rng(2);
        let two = RateRegionModel::new(two_client_example());
        let three = RateRegionModel::new(independent_distribution(&[0.9, 0.6, 0.3], &CapacitySchedule::Constant(2))?);
        let mut worst: f64 = 0.0;
        for (model, p) in [(&two, vec![0.5, 0.5]), (&three, vec![0.5, 0.3, 0.2])] {
            let obj = HObjective::new(p.clone(), CorrelationMode::Uncorrelated)?;
            let (opt_table, _) = optimal_policy(model, &obj, 1e-12)?;
            worst = worst.max(exact_bias(model, &opt_table, &p, &mut rng)?);
            for _ in 0..5 {
                let t = random_table(model, &mut rng)?;
                worst = worst.max(exact_bias(model, &t, &p, &mut rng)?);
            }
        }

        // Monte Carlo on the fixture under the policy achieving r*.
        let p = [0.5, 0.5];
        let obj = HObjective::new(p.to_vec(), CorrelationMode::Uncorrelated)?;
        let (table, opt) = optimal_policy(&two, &obj, 1e-12)?;
        let v = [vec![1.0, -2.0], vec![0.5, 3.0]];
        let v_bar = [p[0] * v[0][0] + p[1] * v[1][0], p[0] * v[0][1] + p[1] * v[1][1]];
        let draws = 100_000;
        let mut process = EnumeratedProcess::new(two_client_example());
        let mut avail_rng = SeedStreams::new(2).stream(Stream::Availability);
        let (mut s, mut ss) = ([0.0; 2], [0.0; 2]);
        for t in 0..draws {
            let config = process.sample(t, &mut avail_rng);
            let sel = fixed_policy_select(&table, &config, &mut rng)?.selected;
            let ups: Vec<ClientUpdate> = sel.iter().map(|c| ClientUpdate::new(*c, v[c.0].clone())).collect();
            let d = aggregate_debias_with(&ups, &p, &opt.rates, 0.0, 2)?.delta;
            for j in 0..2 {
                s[j] += d[j];
                ss[j] += d[j] * d[j];
            }
        }
        let n = draws as f64;
        let mut z_max: f64 = 0.0;
        for j in 0..2 {
            let mean = s[j] / n;
            let var = (ss[j] / n - mean * mean) * n / (n - 1.0);
            z_max = z_max.max((mean - v_bar[j]).abs() / (var / n).sqrt());
        }
        Ok((
            worst <= 1e-12 && z_max <= 4.0,
            format!("exact max |E[D] - v_bar| = {worst:.2e}; Monte Carlo max |z| = {z_max:.2} at {draws} draws"),
        ))
    })
}

// ---------------------------------------------------------------- 3

pub fn check_variance_formula() -> CheckOutcome {
    timed(3, "variance formula", None, || {
        let mut rng = rng(3);
        let dist = independent_distribution(&[0.8, 0.5, 0.3], &CapacitySchedule::Constant(2))?;
        let model = RateRegionModel::new(dist.clone());
        let p = vec![0.5, 0.3, 0.2];
        let obj = HObjective::new(p.clone(), CorrelationMode::Uncorrelated)?;
        let (table, _) = optimal_policy(&model, &obj, 1e-12)?;
        let cov = selection_covariance(&model, &table)?;
        let r = cov.rates.clone();
        let updates: Vec<Vec<f64>> = (0..3).map(|_| normal_vec(4, 1.0, &mut rng)).collect();
        let trace = sampling_variance_exact(&importance_rows(&p, &r, &updates)?, &cov)?;
        let exact = aggregate_moments(&model, &table, &p, &r, &updates)?;
        let exact_err = (trace - exact.mean_sq_deviation).abs();

        let draws = 1_000_000;
        let mut process = EnumeratedProcess::new(dist);
        let mut avail_rng = SeedStreams::new(3).stream(Stream::Availability);
        let mut acc = 0.0;
        for t in 0..draws {
            let config = process.sample(t, &mut avail_rng);
            let sel = fixed_policy_select(&table, &config, &mut rng)?.selected;
            let ups: Vec<ClientUpdate> = sel.iter().map(|c| ClientUpdate::new(*c, updates[c.0].clone())).collect();
            let d = aggregate_debias_with(&ups, &p, &r, 0.0, 4)?.delta;
            acc += d
                .iter()
                .zip(&exact.full_participation)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        let mc = acc / draws as f64;
        let rel = (mc - trace).abs() / trace;
        Ok((
            exact_err <= 1e-10 && rel <= 0.02,
            format!("Tr(YY^T Sigma) = {trace:.6}, enumeration differs by {exact_err:.1e}, Monte Carlo {mc:.6} ({:.2}% off)", rel * 100.0),
        ))
    })
}

// ---------------------------------------------------------------- 4

/// Local least-squares data for one client of a random instance.
fn tiny_client(dim: usize, shift: f64, rng: &mut StreamRng) -> Result<Samples> {
    let n = 30;
    let features = normal_vec(n * dim, 1.0, rng);
    let targets = (0..n)
        .map(|i| features[i * dim..(i + 1) * dim].iter().sum::<f64>() + shift + rng.random_range(-0.5..0.5))
        .collect();
    Samples::new(dim, features, targets)
}

pub fn check_variance_bounds() -> CheckOutcome {
    timed(4, "variance bounds", None, || {
        let mut rng = rng(4);
        let instances = 100;
        let (mut checked, mut violations) = (0usize, 0usize);
        let mut tightest: f64 = 0.0;
        for _ in 0..instances {
            let n = rng.random_range(2..=4);
            let model = random_independent(n, &mut rng)?;
            let p = random_simplex(n, &mut rng);
            let dim = 3;
            let clients: Vec<Samples> = (0..n).map(|k| tiny_client(dim, k as f64, &mut rng)).collect::<Result<_>>()?;
            let glm = GlmModel {
                kind: ModelKind::LeastSquares,
                dim,
                num_classes: 1,
                l2: 0.01,
                intercept: true,
            };
            let e = rng.random_range(1..=5);
            let t = rng.random_range(0..50);
            let schedule = LearningRateSchedule::inverse_time(0.5, 4.0, e);
            let w = ModelParams(normal_vec(glm.num_params(), 1.0, &mut rng));
            let mut updates = Vec::new();
            let mut g: f64 = 0.0;
            for (k, c) in clients.iter().enumerate() {
                let u = client_local_sgd(&w, ClientId(k), c, &glm, e, t, &schedule, 5, &mut rng)?;
                g = g.max(u.max_grad_norm);
                updates.push(u.delta);
            }
            let eta = schedule.rate(t, e, e);

            // General bound: random policies and a greedy one.
            let mut g_dir = vec![0.0; n];
            for x in g_dir.iter_mut() {
                *x = rng.random_range(0.1..1.0);
            }
            let greedy = greedy_policy_table(&model, &g_dir)?;
            let tables = [random_table(&model, &mut rng)?, random_table(&model, &mut rng)?, greedy.clone()];
            for (i, table) in tables.iter().enumerate() {
                let cov = selection_covariance(&model, table)?;
                if cov.rates.iter().any(|&r| r <= 0.0) {
                    continue;
                }
                let sigma2 = sampling_variance_exact(&importance_rows(&p, &cov.rates, &updates)?, &cov)? / (eta * eta);
                let bounds = variance_bounds(&p, &cov.rates, e, g)?;
                let mut applicable = vec![bounds.general];
                // The second bound is stated for greedy selection under
                // independent availability.
                if i == tables.len() - 1 {
                    applicable.push(bounds.uncorrelated);
                }
                for b in applicable {
                    checked += 1;
                    tightest = tightest.max(sigma2 / b);
                    if sigma2 > b * (1.0 + 1e-9) {
                        violations += 1;
                    }
                }
            }
        }
        Ok((
            violations == 0 && checked > 0,
            format!("{instances} instances, {checked} bound checks, {violations} violations, largest variance/bound {tightest:.3}"),
        ))
    })
}

// ---------------------------------------------------------------- 5

fn brute_force(u: &[f64], available: &[ClientId], k: usize) -> (Vec<ClientId>, f64) {
    let m = available.len();
    let mut best = (Vec::new(), 0.0);
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize > k {
            continue;
        }
        let set: Vec<ClientId> = (0..m).filter(|i| mask & (1 << i) != 0).map(|i| available[i]).collect();
        let v: f64 = set.iter().map(|c| u[c.0]).sum();
        if v > best.1 {
            best = (set, v);
        }
    }
    best
}

pub fn check_greedy_optimality() -> CheckOutcome {
    timed(5, "greedy optimality", None, || {
        let mut rng = rng(5);
        let trials = 1000;
        let mut agree = 0;
        for t in 0..trials {
            let n = rng.random_range(1..=12);
            let k = rng.random_range(0..=4);
            let p = random_simplex(n, &mut rng);
            let mode = if rng.random_bool(0.5) {
                CorrelationMode::Uncorrelated
            } else {
                CorrelationMode::PositivelyCorrelated
            };
            let obj = HObjective::new(p, mode)?;
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(1e-4..1.0)).collect();
            let rate = ParticipationRate::with_initial(r.clone(), 0.001, 1e-4)?;
            let available: Vec<ClientId> = (0..n).filter(|_| rng.random_bool(0.6)).map(ClientId).collect();
            let config = ConfigurationSample::new(t, available.clone(), k);
            let greedy = f3ast_select(&obj, &rate, &config)?.selected;
            let (best, _) = brute_force(&obj.utilities(&r)?, &available, k);
            if greedy == best {
                agree += 1;
            }
        }
        Ok((agree == trials, format!("{agree}/{trials} instances agree")))
    })
}

// ---------------------------------------------------------------- 6

pub fn check_region_oracle() -> CheckOutcome {
    timed(6, "region oracle", None, || {
        let mut rng = rng(6);
        let mut systems = vec![(RateRegionModel::new(two_client_example()), vec![0.5, 0.5])];
        for n in [2, 3, 3, 4] {
            let model = random_independent(n, &mut rng)?;
            let p = random_simplex(n, &mut rng);
            systems.push((model, p));
        }
        let per_system = 1000 / systems.len();
        let (mut outside, mut worse) = (0, 0);
        let mut worst_distance: f64 = 0.0;
        for (i, (model, p)) in systems.iter().enumerate() {
            let mode = if i % 2 == 0 {
                CorrelationMode::Uncorrelated
            } else {
                CorrelationMode::PositivelyCorrelated
            };
            let obj = HObjective::new(p.clone(), mode)?;
            let opt = optimal_rate(model, &obj, 1e-10)?;
            let m = membership(model, &opt.rates, 1e-6)?;
            worst_distance = worst_distance.max(m.distance_upper);
            if !m.inside {
                outside += 1;
            }
            for _ in 0..per_system {
                let r = rate_of_policy(model, &random_table(model, &mut rng)?)?;
                let h = obj.value(&r).unwrap_or(f64::INFINITY);
                if h < opt.value - 1e-9 {
                    worse += 1;
                }
            }
        }
        let two = RateRegionModel::new(two_client_example());
        let ra = membership(&two, &[0.375, 0.0], 1e-6)?.inside;
        let rb = membership(&two, &[0.375, 0.5], 1e-6)?.inside;
        let far = membership(&two, &[0.5, 0.5], 1e-6)?.inside;
        let samples = per_system * systems.len();
        Ok((
            outside == 0 && worse == 0 && ra && rb && !far,
            format!(
                "r* inside on {}/{} systems (max distance {worst_distance:.1e}); {worse}/{samples} random rates beat H(r*); r^a inside {ra}, r^b inside {rb}, (0.5, 0.5) inside {far}",
                systems.len() - outside,
                systems.len()
            ),
        ))
    })
}

// ---------------------------------------------------------------- 7

/// Setup of the convergence-shape experiment.
#[derive(Debug, Clone)]
pub struct ConvergenceSetup {
    pub l2: f64,
    pub local_steps: usize,
    pub batch_size: usize,
    pub capacity: usize,
    pub horizon: usize,
    pub seeds: Vec<u64>,
}

impl Default for ConvergenceSetup {
    fn default() -> Self {
        Self {
            l2: 0.01,
            local_steps: 5,
            batch_size: 20,
            capacity: 10,
            horizon: 1000,
            seeds: (0..10).collect(),
        }
    }
}

/// `F(w_T) - F*` and `F(w_2T) - F*` for one seed: ridge regression on the
/// i.i.d. regression set, every client available, F3AST started at
/// `r = K/N`, inverse-time steps with `mu = l2` (the strong convexity every
/// client objective has) and `L` the largest client smoothness.
pub fn suboptimality_at_t_and_2t(setup: &ConvergenceSetup, seed: u64) -> Result<(f64, f64)> {
    let streams = SeedStreams::new(seed);
    let ds = DatasetSpec::synthetic_iid(IidTask::Regression).generate(0.2, &mut streams.stream(Stream::Data))?;
    let model = GlmModel::for_dataset(&ds, setup.l2, false);
    let curvature = least_squares_curvature(&model, &ds)?;
    let (_, f_star) = ridge_optimum(&model, &ds)?;
    let n = ds.num_clients();
    let availability = AvailabilityModel::build(
        AvailabilityParams::new(AvailabilityKind::Always),
        ds.weights(),
        &mut streams.stream(Stream::AvailabilityParams),
    )?;
    let process = IndependentProcess::new(availability, CapacitySchedule::Constant(setup.capacity));
    let r0 = setup.capacity as f64 / n as f64;
    let policy = Policy::F3ast {
        obj: HObjective::new(ds.weights().to_vec(), CorrelationMode::Uncorrelated)?,
        rate: ParticipationRate::with_initial(vec![r0; n], 0.001, 1e-4)?,
    };
    let config = TrainingConfig {
        local_steps: setup.local_steps,
        batch_size: setup.batch_size,
        schedule: LearningRateSchedule::inverse_time(setup.l2, curvature.l_client_max, setup.local_steps),
        eval_every: 0,
        rates_every: 0,
    };
    let mut sim = Simulation::new(
        &ds,
        model,
        ModelParams::zeros(model.num_params()),
        ServerOptimizer::Sgd,
        policy,
        config,
        Box::new(process),
        streams,
    )?;
    sim.run(setup.horizon)?;
    let at_t = model.global_objective(sim.params.as_slice(), &ds) - f_star;
    sim.run(setup.horizon)?;
    let at_2t = model.global_objective(sim.params.as_slice(), &ds) - f_star;
    Ok((at_t, at_2t))
}

pub fn check_convergence_rate() -> CheckOutcome {
    timed(7, "convergence rate shape", Some(60.0), || {
        let setup = ConvergenceSetup::default();
        let gaps: Vec<(f64, f64)> = setup
            .seeds
            .par_iter()
            .map(|&s| suboptimality_at_t_and_2t(&setup, s))
            .collect::<Result<_>>()?;
        let k = gaps.len() as f64;
        let at_t = gaps.iter().map(|g| g.0).sum::<f64>() / k;
        let at_2t = gaps.iter().map(|g| g.1).sum::<f64>() / k;
        let ratio = at_t / at_2t;
        Ok((
            (1.25..=2.6).contains(&ratio),
            format!(
                "mean suboptimality {at_t:.3e} at T={} and {at_2t:.3e} at 2T over {} seeds, ratio {ratio:.3}",
                setup.horizon,
                gaps.len()
            ),
        ))
    })
}

// ---------------------------------------------------------------- 8

/// Seed-mean per-sample accuracy of the final model for each policy.
pub fn final_accuracy(cfg: &ExperimentConfig, policies: &[PolicyName]) -> Result<Vec<f64>> {
    let setups: Vec<_> = cfg.seeds.par_iter().map(|&s| prepare_seed(cfg, s)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..policies.len()).flat_map(|i| (0..setups.len()).map(move |j| (i, j))).collect();
    let acc: Vec<(usize, f64)> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let records = run_single(cfg, &setups[j], policies[i])?;
            let last = records
                .iter()
                .rev()
                .find_map(|r| r.per_sample)
                .ok_or_else(|| Error::invalid("run produced no evaluation"))?;
            Ok((i, last.accuracy))
        })
        .collect::<Result<_>>()?;
    let mut means = vec![0.0; policies.len()];
    for (i, a) in acc {
        means[i] += a / setups.len() as f64;
    }
    Ok(means)
}

/// Synthetic(1,1) softmax under `kind`, 500 rounds, seeds 0 to 2, with the
/// remaining settings at their defaults.
pub fn directional_config(kind: AvailabilityKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(DatasetSpec::synthetic_alpha(1.0, 1.0), AvailabilityParams::new(kind));
    cfg.rounds = 500;
    cfg.eval_every = 10;
    cfg.seeds = vec![0, 1, 2];
    cfg
}

pub fn check_directional() -> CheckOutcome {
    timed(8, "directional comparison", Some(300.0), || {
        let mut ok = true;
        let mut parts = Vec::new();
        for kind in [AvailabilityKind::Smartphones, AvailabilityKind::Uneven] {
            let acc = final_accuracy(&directional_config(kind), &[PolicyName::F3ast, PolicyName::Fedavg])?;
            let margin = acc[0] - acc[1];
            ok &= margin >= 0.02;
            parts.push(format!("{kind:?}: f3ast {:.4} vs fedavg {:.4} ({margin:+.4})", acc[0], acc[1]));
        }
        Ok((ok, parts.join("; ")))
    })
}

// ---------------------------------------------------------------- 9

pub fn check_update_norm_bound() -> CheckOutcome {
    timed(9, "update-norm bound", None, || {
        let streams = SeedStreams::new(9);
        let ds = DatasetSpec::synthetic_iid(IidTask::Regression).generate(0.2, &mut streams.stream(Stream::Data))?;
        let l2 = 0.01;
        let model = GlmModel::for_dataset(&ds, l2, false);
        let curvature = least_squares_curvature(&model, &ds)?;
        let e = 5;
        let schedule = LearningRateSchedule::inverse_time(l2, curvature.l_client_max, e);
        let availability = AvailabilityModel::build(
            AvailabilityParams::new(AvailabilityKind::HomeDevices),
            ds.weights(),
            &mut streams.stream(Stream::AvailabilityParams),
        )?;
        let n = ds.num_clients();
        let policy = Policy::F3ast {
            obj: HObjective::new(ds.weights().to_vec(), CorrelationMode::Uncorrelated)?,
            rate: ParticipationRate::uniform(n, 0.001, 1e-4)?,
        };
        let config = TrainingConfig {
            local_steps: e,
            batch_size: 20,
            schedule,
            eval_every: 0,
            rates_every: 0,
        };
        let mut sim = Simulation::new(
            &ds,
            model,
            ModelParams::zeros(model.num_params()),
            ServerOptimizer::Sgd,
            policy,
            config,
            Box::new(IndependentProcess::new(availability, CapacitySchedule::Constant(10))),
            streams,
        )?;
        let records = sim.run(1000)?;
        let g = records.iter().map(|r| r.max_grad_norm).fold(0.0, f64::max);
        let (mut observed, mut violations) = (0usize, 0usize);
        let mut tightest: f64 = 0.0;
        for r in &records {
            let bound = 2.0 * schedule.rate(r.round, e, e) * e as f64 * g;
            for &v in &r.update_norms {
                observed += 1;
                tightest = tightest.max(v / bound);
                if v > bound * (1.0 + 1e-12) {
                    violations += 1;
                }
            }
        }
        Ok((
            violations == 0 && observed > 0,
            format!("{observed} client updates over 1000 rounds, G = {g:.3}, {violations} violations, largest |v|/bound {tightest:.3}"),
        ))
    })
}

// ---------------------------------------------------------------- 10

/// Small config used for the determinism check and the golden plots.
pub fn determinism_config(output_dir: PathBuf) -> ExperimentConfig {
    let dataset = DatasetSpec::SyntheticAlpha {
        alpha: 1.0,
        beta: 1.0,
        num_clients: 12,
        sizes: ClientSizes::Fixed { n: 40 },
        dim: 8,
        num_classes: 4,
    };
    let mut cfg = ExperimentConfig::new(dataset, AvailabilityParams::new(AvailabilityKind::HomeDevices));
    cfg.capacity = CapacitySchedule::Constant(3);
    cfg.policies = vec![PolicyName::F3ast, PolicyName::Fedavg, PolicyName::Poc, PolicyName::Fixed];
    cfg.rounds = 40;
    cfg.eval_every = 4;
    cfg.rates_every = 10;
    cfg.seeds = vec![0, 1];
    cfg.output_dir = output_dir;
    cfg
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<(String, Vec<u8>)>> {
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok((name, std::fs::read(p).map_err(|e| Error::io(p, e))?))
        })
        .collect()
}

/// Runs the small config twice under `work_dir` and compares CSVs and plots
/// byte for byte. With `golden`, the plots must also equal the files there.
pub fn check_determinism(work_dir: &Path, golden: Option<&Path>) -> CheckOutcome {
    timed(10, "determinism", None, || {
        let mut csvs = Vec::new();
        let mut svgs = Vec::new();
        for run in ["a", "b"] {
            let dir = work_dir.join(run);
            run_experiment(&determinism_config(dir.clone()))?;
            let files = csv_files(&dir)?;
            let plots = emit_plots(&files, &dir.join("plots"))?;
            csvs.push(read_all(&files)?);
            svgs.push(read_all(&plots)?);
        }
        let csv_same = !csvs[0].is_empty() && csvs[0] == csvs[1];
        let svg_same = !svgs[0].is_empty() && svgs[0] == svgs[1];
        let golden_note = match golden {
            None => "golden comparison skipped".to_string(),
            Some(dir) => {
                let mut mismatched = Vec::new();
                for (name, bytes) in &svgs[0] {
                    if std::fs::read(dir.join(name)).ok().as_deref() != Some(bytes.as_slice()) {
                        mismatched.push(name.clone());
                    }
                }
                if mismatched.is_empty() {
                    format!("{} plots match golden files", svgs[0].len())
                } else {
                    format!("plots differing from golden files: {}", mismatched.join(", "))
                }
            }
        };
        let golden_ok = !golden_note.starts_with("plots differing");
        Ok((
            csv_same && svg_same && golden_ok,
            format!(
                "{} CSVs identical across runs: {csv_same}; {} plots identical: {svg_same}; {golden_note}",
                csvs[0].len(),
                svgs[0].len()
            ),
        ))
    })
}

/// Every check in order. Criterion 10 writes under `work_dir`.
pub fn run_all(work_dir: &Path, golden: Option<&Path>) -> Vec<CheckOutcome> {
    vec![
        check_rate_convergence(),
        check_unbiasedness(),
        check_variance_formula(),
        check_variance_bounds(),
        check_greedy_optimality(),
        check_region_oracle(),
        check_convergence_rate(),
        check_directional(),
        check_update_norm_bound(),
        check_determinism(work_dir, golden),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_tables_are_valid_policies() {
        let mut rng = rng(0);
        let model = RateRegionModel::new(two_client_example());
        let t = random_table(&model, &mut rng).unwrap();
        let r = rate_of_policy(&model, &t).unwrap();
        assert!(r.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn brute_force_respects_capacity() {
        let avail = [ClientId(0), ClientId(2), ClientId(3)];
        let (set, v) = brute_force(&[1.0, 5.0, 2.0, 3.0], &avail, 2);
        assert_eq!(set, vec![ClientId(2), ClientId(3)]);
        assert_eq!(v, 5.0);
        assert!(brute_force(&[1.0], &[ClientId(0)], 0).0.is_empty());
    }

    #[test]
    fn outcome_line_format() {
        let o = CheckOutcome {
            id: 3,
            name: "variance formula",
            passed: true,
            detail: "x".into(),
            seconds: 0.5,
        };
        assert!(o.to_string().contains("PASS (x)"));
    }
}
