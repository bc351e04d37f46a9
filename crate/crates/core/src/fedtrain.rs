//! FedOpt round engine: local SGD on clients, aggregation, server
//! optimizers and the per-round simulation loop.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::availability::{ClientId, ConfigurationProcess};
use crate::data_models::{sample_batch, EvalMode, FederatedDataset, GlmModel, Metrics, Samples};
use crate::error::{Error, Result};
use crate::rng::{SeedStreams, Stream, StreamRng};
use crate::selection::{
    f3ast_select, fedavg_select, fixed_policy_select, poc_select, HObjective, ParticipationRate, PolicyTable,
};

/// Flat model parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// `v_k = w_k^(E) - w`, the model change after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client: ClientId,
    pub delta: Vec<f64>,
    pub samples_seen: usize,
    /// Largest mini-batch gradient norm met along the local trajectory.
    pub max_grad_norm: f64,
}

impl ClientUpdate {
    pub fn new(client: ClientId, delta: Vec<f64>) -> Self {
        Self {
            client,
            delta,
            samples_seen: 0,
            max_grad_norm: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.delta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Client step sizes `eta_(t,i)` for round `t` and local step `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearningRateSchedule {
    Constant { eta: f64 },
    /// `2 / (mu (gamma + t E + i))`
    InverseTime { mu: f64, gamma: f64 },
}

impl LearningRateSchedule {
    /// Inverse-time schedule with `gamma = max(8 L / mu, E)`.
    pub fn inverse_time(mu: f64, l: f64, local_steps: usize) -> Self {
        LearningRateSchedule::InverseTime {
            mu,
            gamma: (8.0 * l / mu).max(local_steps as f64),
        }
    }

    pub fn rate(&self, round: usize, step: usize, local_steps: usize) -> f64 {
        match *self {
            LearningRateSchedule::Constant { eta } => eta,
            LearningRateSchedule::InverseTime { mu, gamma } => {
                2.0 / (mu * (gamma + (round * local_steps + step) as f64))
            }
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        let ok = match *self {
            LearningRateSchedule::Constant { eta } => eta > 0.0 && eta.is_finite(),
            LearningRateSchedule::InverseTime { mu, gamma } => {
                mu > 0.0 && mu.is_finite() && gamma > 0.0 && gamma.is_finite()
            }
        };
        if !ok {
            errors.push("schedule parameters must be positive and finite".into());
        }
    }
}

/// Runs `local_steps` mini-batch SGD steps from `w` on `data` and returns
/// the model change. Step `i` of round `t` uses `schedule.rate(t, i, E)`.
#[allow(clippy::too_many_arguments)]
pub fn client_local_sgd(
    w: &ModelParams,
    client: ClientId,
    data: &Samples,
    model: &GlmModel,
    local_steps: usize,
    round: usize,
    schedule: &LearningRateSchedule,
    batch_size: usize,
    rng: &mut StreamRng,
) -> Result<ClientUpdate> {
    if data.is_empty() {
        return Err(Error::invalid(format!("client {client} has an empty dataset")));
    }
    if w.dim() != model.num_params() {
        return Err(Error::DimensionMismatch {
            expected: model.num_params(),
            got: w.dim(),
        });
    }
    let mut local = w.0.clone();
    let mut max_norm: f64 = 0.0;
    let mut seen = 0;
    for step in 0..local_steps {
        let batch = sample_batch(data.len(), batch_size.max(1), rng);
        let (_, g) = model.loss_and_grad(&local, data, &batch);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFiniteGradient {
                client: client.0,
                step,
                detail: format!("round {round}, gradient norm {norm}"),
            });
        }
        max_norm = max_norm.max(norm);
        seen += batch.len();
        let eta = schedule.rate(round, step, local_steps);
        for (x, gi) in local.iter_mut().zip(&g) {
            *x -= eta * gi;
        }
    }
    let delta = local.iter().zip(&w.0).map(|(a, b)| a - b).collect();
    Ok(ClientUpdate {
        client,
        delta,
        samples_seen: seen,
        max_grad_norm: max_norm,
    })
}

/// The server-side update `Delta` and who contributed to it.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateUpdate {
    pub delta: Vec<f64>,
    pub contributing: Vec<ClientId>,
}

impl AggregateUpdate {
    pub fn zero(dim: usize) -> Self {
        Self {
            delta: vec![0.0; dim],
            contributing: Vec::new(),
        }
    }
}

fn check_updates(updates: &[ClientUpdate], dim: usize, n: usize) -> Result<()> {
    for u in updates {
        if u.client.0 >= n {
            return Err(Error::invalid(format!("client {} out of range", u.client)));
        }
        if u.delta.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: u.delta.len(),
            });
        }
    }
    Ok(())
}

/// `sum_k (p_k / r_k) v_k`, folded in the order given.
fn debiased_sum(updates: &[ClientUpdate], p: &[f64], r: &[f64], r_min: f64) -> Result<Vec<f64>> {
    let dim = updates.first().map_or(0, |u| u.delta.len());
    check_updates(updates, dim, p.len().min(r.len()))?;
    let mut delta = vec![0.0; dim];
    for u in updates {
        let rk = r[u.client.0];
        if !(rk > 0.0 && rk >= r_min) {
            return Err(Error::Invariant(format!("rate of client {} is {rk}, below the floor {r_min}", u.client)));
        }
        let scale = p[u.client.0] / rk;
        for (d, v) in delta.iter_mut().zip(&u.delta) {
            *d += scale * v;
        }
    }
    Ok(delta)
}

fn sorted_by_client(updates: &[ClientUpdate]) -> Vec<ClientUpdate> {
    let mut out = updates.to_vec();
    out.sort_by_key(|u| u.client);
    out
}

/// De-biased aggregation `Delta = sum_{k in S} (p_k / r_k) v_k`.
pub fn aggregate_debias(
    updates: &[ClientUpdate],
    p: &[f64],
    rate: &ParticipationRate,
    dim: usize,
) -> Result<AggregateUpdate> {
    aggregate_debias_with(updates, p, rate.rates(), rate.r_min(), dim)
}

/// [`aggregate_debias`] with an explicit rate vector, e.g. the exact rate
/// of a static policy.
pub fn aggregate_debias_with(
    updates: &[ClientUpdate],
    p: &[f64],
    r: &[f64],
    r_min: f64,
    dim: usize,
) -> Result<AggregateUpdate> {
    if updates.is_empty() {
        return Ok(AggregateUpdate::zero(dim));
    }
    let ordered = sorted_by_client(updates);
    check_updates(&ordered, dim, p.len())?;
    Ok(AggregateUpdate {
        delta: debiased_sum(&ordered, p, r, r_min)?,
        contributing: ordered.iter().map(|u| u.client).collect(),
    })
}

/// Baseline aggregation `sum p_k v_k / sum p_k` over the selected set.
pub fn aggregate_weighted_mean(updates: &[ClientUpdate], p: &[f64], dim: usize) -> Result<AggregateUpdate> {
    let ordered = sorted_by_client(updates);
    check_updates(&ordered, dim, p.len())?;
    let mass: f64 = ordered.iter().map(|u| p[u.client.0]).sum();
    if ordered.is_empty() || mass <= 0.0 {
        return Ok(AggregateUpdate::zero(dim));
    }
    let mut delta = vec![0.0; dim];
    for u in &ordered {
        let w = p[u.client.0] / mass;
        for (d, v) in delta.iter_mut().zip(&u.delta) {
            *d += w * v;
        }
    }
    Ok(AggregateUpdate {
        delta,
        contributing: ordered.iter().map(|u| u.client).collect(),
    })
}

/// Unweighted mean of the selected updates.
pub fn aggregate_mean(updates: &[ClientUpdate], dim: usize) -> Result<AggregateUpdate> {
    let ordered = sorted_by_client(updates);
    check_updates(&ordered, dim, usize::MAX)?;
    if ordered.is_empty() {
        return Ok(AggregateUpdate::zero(dim));
    }
    let w = 1.0 / ordered.len() as f64;
    let mut delta = vec![0.0; dim];
    for u in &ordered {
        for (d, v) in delta.iter_mut().zip(&u.delta) {
            *d += w * v;
        }
    }
    Ok(AggregateUpdate {
        delta,
        contributing: ordered.iter().map(|u| u.client).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_server_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_server_lr() -> f64 {
    0.01
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: default_server_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServerOptimizer {
    /// `w + Delta`
    Sgd,
    /// Adam on the pseudo-gradient `Delta`, ascending along it.
    Adam {
        config: AdamConfig,
        m: Vec<f64>,
        v: Vec<f64>,
        step: u64,
    },
}

impl ServerOptimizer {
    pub fn adam(config: AdamConfig, dim: usize) -> Self {
        ServerOptimizer::Adam {
            config,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    /// Number of applied (non-skipped) updates.
    pub fn steps(&self) -> u64 {
        match self {
            ServerOptimizer::Sgd => 0,
            ServerOptimizer::Adam { step, .. } => *step,
        }
    }

    /// Applies `delta` to `w`. An update with no contributors is a skipped
    /// round and leaves both the model and the optimizer state untouched.
    pub fn server_step(&mut self, w: &mut ModelParams, delta: &AggregateUpdate) -> Result<()> {
        if delta.delta.len() != w.dim() {
            return Err(Error::DimensionMismatch {
                expected: w.dim(),
                got: delta.delta.len(),
            });
        }
        if delta.contributing.is_empty() {
            return Ok(());
        }
        match self {
            ServerOptimizer::Sgd => {
                for (x, d) in w.0.iter_mut().zip(&delta.delta) {
                    *x += d;
                }
            }
            ServerOptimizer::Adam { config, m, v, step } => {
                if m.len() != w.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: w.dim(),
                        got: m.len(),
                    });
                }
                *step += 1;
                let t = *step as i32;
                let c1 = 1.0 - config.beta1.powi(t);
                let c2 = 1.0 - config.beta2.powi(t);
                for i in 0..w.dim() {
                    let d = delta.delta[i];
                    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * d;
                    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * d * d;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    w.0[i] += config.lr * m_hat / (v_hat.sqrt() + config.eps);
                }
            }
        }
        Ok(())
    }
}

/// Selection rule plus the matching aggregation.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Greedy on `-grad H(r)` with de-biased aggregation.
    F3ast { obj: HObjective, rate: ParticipationRate },
    /// Sampling proportional to `p` with the weighted-mean aggregation.
    FedAvg,
    /// Power-of-Choice with the unweighted mean. `m` defaults to the
    /// round's capacity and `d` to `2m`.
    PowerOfChoice { d: Option<usize>, m: Option<usize> },
    /// Static table with de-biased aggregation by its exact rate.
    Fixed { table: PolicyTable, rates: Vec<f64> },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::F3ast { .. } => "f3ast",
            Policy::FedAvg => "fedavg",
            Policy::PowerOfChoice { .. } => "poc",
            Policy::Fixed { .. } => "fixed",
        }
    }

    pub fn rates(&self) -> Option<&[f64]> {
        match self {
            Policy::F3ast { rate, .. } => Some(rate.rates()),
            Policy::Fixed { rates, .. } => Some(rates),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub local_steps: usize,
    pub batch_size: usize,
    pub schedule: LearningRateSchedule,
    /// Evaluate on validation data every this many rounds (0 disables).
    pub eval_every: usize,
    /// Record `r(t)` every this many rounds (0 disables).
    pub rates_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            local_steps: 10,
            batch_size: 20,
            schedule: LearningRateSchedule::Constant { eta: 0.01 },
            eval_every: 10,
            rates_every: 0,
        }
    }
}

/// Metrics row for one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<ClientId>,
    pub num_available: usize,
    pub capacity: usize,
    pub skipped: bool,
    pub per_sample: Option<Metrics>,
    pub per_user: Option<Metrics>,
    pub rates: Option<Vec<f64>>,
    /// `|v_k|` for each selected client, in selection order.
    pub update_norms: Vec<f64>,
    /// Largest local mini-batch gradient norm this round.
    pub max_grad_norm: f64,
    pub wall_clock_secs: f64,
}

/// One training run: server state, policy and the sub-streams it owns.
pub struct Simulation<'a> {
    pub dataset: &'a FederatedDataset,
    pub model: GlmModel,
    pub params: ModelParams,
    pub optimizer: ServerOptimizer,
    pub policy: Policy,
    pub config: TrainingConfig,
    process: Box<dyn ConfigurationProcess + 'a>,
    streams: SeedStreams,
    availability_rng: StreamRng,
    policy_rng: StreamRng,
    round: usize,
}

impl<'a> Simulation<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dataset: &'a FederatedDataset,
        model: GlmModel,
        params: ModelParams,
        optimizer: ServerOptimizer,
        policy: Policy,
        config: TrainingConfig,
        process: Box<dyn ConfigurationProcess + 'a>,
        streams: SeedStreams,
    ) -> Result<Self> {
        if params.dim() != model.num_params() {
            return Err(Error::DimensionMismatch {
                expected: model.num_params(),
                got: params.dim(),
            });
        }
        if process.num_clients() != dataset.num_clients() {
            return Err(Error::DimensionMismatch {
                expected: dataset.num_clients(),
                got: process.num_clients(),
            });
        }
        Ok(Self {
            dataset,
            model,
            params,
            optimizer,
            policy,
            config,
            process,
            availability_rng: streams.stream(Stream::Availability),
            policy_rng: streams.stream(Stream::Policy),
            streams,
            round: 0,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    fn train_selected(&self, selected: &[ClientId]) -> Result<Vec<ClientUpdate>> {
        let t = self.round;
        let (params, data, model, config, streams) =
            (&self.params, self.dataset, &self.model, &self.config, &self.streams);
        selected
            .par_iter()
            .map(|&c| {
                let mut rng = streams.keyed(Stream::Batching, &[t as u64, c.0 as u64]);
                client_local_sgd(
                    params,
                    c,
                    &data.clients[c.0].train,
                    model,
                    config.local_steps,
                    t,
                    &config.schedule,
                    config.batch_size,
                    &mut rng,
                )
            })
            .collect()
    }

    /// Samples the configuration, selects, trains, aggregates and steps the
    /// server model. F3AST updates `r` before aggregating so the division
    /// uses the fresh rates.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let start = Instant::now();
        let t = self.round;
        let config = self.process.sample(t, &mut self.availability_rng);
        let p = self.dataset.weights();
        let selected = match &mut self.policy {
            Policy::F3ast { obj, rate } => {
                let s = f3ast_select(obj, rate, &config)?.selected;
                rate.smooth_update(&s);
                s
            }
            Policy::FedAvg => fedavg_select(p, &config, &mut self.policy_rng).selected,
            Policy::PowerOfChoice { d, m } => {
                let (model, params, data) = (&self.model, &self.params, self.dataset);
                let m = m.unwrap_or(config.capacity).min(config.capacity);
                let d = d.unwrap_or(2 * m).max(m);
                poc_select(
                    p,
                    &config,
                    |c| model.client_objective(params.as_slice(), &data.clients[c.0].train),
                    d,
                    m,
                    &mut self.policy_rng,
                )
                .selected
            }
            Policy::Fixed { table, .. } => fixed_policy_select(table, &config, &mut self.policy_rng)?.selected,
        };
        let updates = self.train_selected(&selected)?;
        let dim = self.params.dim();
        let aggregate = match &self.policy {
            Policy::F3ast { rate, .. } => aggregate_debias(&updates, p, rate, dim)?,
            Policy::Fixed { rates, .. } => aggregate_debias_with(&updates, p, rates, 0.0, dim)?,
            Policy::FedAvg => aggregate_weighted_mean(&updates, p, dim)?,
            Policy::PowerOfChoice { .. } => aggregate_mean(&updates, dim)?,
        };
        if aggregate.delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("non-finite aggregate in round {t}")));
        }
        self.optimizer.server_step(&mut self.params, &aggregate)?;
        self.round += 1;

        let every = |k: usize| k > 0 && (t + 1).is_multiple_of(k);
        let (per_sample, per_user) = if every(self.config.eval_every) {
            let w = self.params.as_slice();
            (
                Some(self.model.evaluate(w, self.dataset, EvalMode::PerSample)),
                Some(self.model.evaluate(w, self.dataset, EvalMode::PerUser)),
            )
        } else {
            (None, None)
        };
        let rates = if every(self.config.rates_every) {
            self.policy.rates().map(<[f64]>::to_vec)
        } else {
            None
        };
        Ok(RoundRecord {
            round: t,
            skipped: aggregate.contributing.is_empty(),
            update_norms: updates.iter().map(ClientUpdate::norm).collect(),
            max_grad_norm: updates.iter().map(|u| u.max_grad_norm).fold(0.0, f64::max),
            selected,
            num_available: config.available.len(),
            capacity: config.capacity,
            per_sample,
            per_user,
            rates,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        })
    }

    pub fn run(&mut self, rounds: usize) -> Result<Vec<RoundRecord>> {
        (0..rounds).map(|_| self.run_round()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_models::ModelKind;

    fn ls_model(dim: usize) -> GlmModel {
        GlmModel {
            kind: ModelKind::LeastSquares,
            dim,
            num_classes: 1,
            l2: 0.0,
            intercept: false,
        }
    }

    fn rng() -> StreamRng {
        SeedStreams::new(3).stream(Stream::Batching)
    }

    #[test]
    fn zero_local_steps_give_zero_update() {
        let data = Samples::new(1, vec![1.0], vec![2.0]).unwrap();
        let w = ModelParams(vec![0.5]);
        let sched = LearningRateSchedule::Constant { eta: 0.1 };
        let u = client_local_sgd(&w, ClientId(0), &data, &ls_model(1), 0, 0, &sched, 20, &mut rng()).unwrap();
        assert_eq!(u.delta, vec![0.0]);
    }

    #[test]
    fn one_step_on_single_sample() {
        let data = Samples::new(1, vec![1.0], vec![2.0]).unwrap();
        let w = ModelParams(vec![0.0]);
        let sched = LearningRateSchedule::Constant { eta: 0.1 };
        let u = client_local_sgd(&w, ClientId(0), &data, &ls_model(1), 1, 0, &sched, 20, &mut rng()).unwrap();
        assert!((u.delta[0] - 0.2).abs() < 1e-15);
        assert!((u.max_grad_norm - 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_client_data_is_an_error() {
        let data = Samples::new(1, vec![], vec![]).unwrap();
        let sched = LearningRateSchedule::Constant { eta: 0.1 };
        let err = client_local_sgd(&ModelParams(vec![0.0]), ClientId(0), &data, &ls_model(1), 1, 0, &sched, 20, &mut rng());
        assert!(err.is_err());
    }

    #[test]
    fn diverging_gradient_is_reported() {
        let data = Samples::new(1, vec![1e300], vec![0.0]).unwrap();
        let sched = LearningRateSchedule::Constant { eta: 1.0 };
        let err = client_local_sgd(&ModelParams(vec![1e300]), ClientId(4), &data, &ls_model(1), 3, 0, &sched, 1, &mut rng());
        assert!(matches!(err, Err(Error::NonFiniteGradient { client: 4, .. })));
    }

    #[test]
    fn inverse_time_schedule() {
        let s = LearningRateSchedule::inverse_time(0.5, 1.0, 5);
        assert_eq!(s, LearningRateSchedule::InverseTime { mu: 0.5, gamma: 16.0 });
        assert!((s.rate(2, 3, 5) - 2.0 / (0.5 * 29.0)).abs() < 1e-15);
        let s = LearningRateSchedule::inverse_time(1.0, 0.1, 5);
        assert_eq!(s, LearningRateSchedule::InverseTime { mu: 1.0, gamma: 5.0 });
    }

    #[test]
    fn aggregation_identities() {
        let ups = vec![
            ClientUpdate::new(ClientId(1), vec![2.0, 0.0]),
            ClientUpdate::new(ClientId(0), vec![1.0, 1.0]),
        ];
        let p = [0.25, 0.75];
        let full = ParticipationRate::with_initial(vec![1.0, 1.0], 0.1, 1e-4).unwrap();
        let agg = aggregate_debias(&ups, &p, &full, 2).unwrap();
        assert_eq!(agg.delta, vec![1.75, 0.25]);
        assert_eq!(agg.contributing, vec![ClientId(0), ClientId(1)]);
        let half = ParticipationRate::with_initial(vec![0.5, 0.25], 0.1, 1e-4).unwrap();
        let one = aggregate_debias(&ups[..1], &p, &half, 2).unwrap();
        assert_eq!(one.delta, vec![6.0, 0.0]);
        let empty = aggregate_debias(&[], &p, &half, 2).unwrap();
        assert_eq!(empty, AggregateUpdate::zero(2));
        let wm = aggregate_weighted_mean(&ups, &p, 2).unwrap();
        assert_eq!(wm.delta, vec![1.75, 0.25]);
        let m = aggregate_mean(&ups, 2).unwrap();
        assert_eq!(m.delta, vec![1.5, 0.5]);
    }

    #[test]
    fn rate_below_floor_is_an_invariant_violation() {
        let ups = vec![ClientUpdate::new(ClientId(0), vec![1.0])];
        let err = aggregate_debias_with(&ups, &[1.0], &[1e-6], 1e-4, 1);
        assert!(matches!(err, Err(Error::Invariant(_))));
    }

    #[test]
    fn server_steps() {
        let mut w = ModelParams(vec![1.0, -1.0]);
        let zero = AggregateUpdate {
            delta: vec![0.0, 0.0],
            contributing: vec![ClientId(0)],
        };
        ServerOptimizer::Sgd.server_step(&mut w, &zero).unwrap();
        assert_eq!(w.0, vec![1.0, -1.0]);
        let mut adam = ServerOptimizer::adam(AdamConfig::default(), 2);
        adam.server_step(&mut w, &zero).unwrap();
        assert_eq!(w.0, vec![1.0, -1.0]);

        let mut w = ModelParams(vec![0.0, 0.0]);
        let mut adam = ServerOptimizer::adam(AdamConfig::default(), 2);
        let d = AggregateUpdate {
            delta: vec![1.0, 0.0],
            contributing: vec![ClientId(0)],
        };
        adam.server_step(&mut w, &d).unwrap();
        assert!((w.0[0] - 0.01).abs() < 1e-9 && w.0[1] == 0.0);
        assert_eq!(adam.steps(), 1);
        adam.server_step(&mut w, &AggregateUpdate::zero(2)).unwrap();
        assert_eq!(adam.steps(), 1);
        let bad = AggregateUpdate::zero(3);
        assert!(matches!(adam.server_step(&mut w, &bad), Err(Error::DimensionMismatch { .. })));
    }
}
