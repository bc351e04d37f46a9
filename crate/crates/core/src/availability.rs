//! Client availability processes and per-round communication capacity.
//!
//! The five built-in models are independent across clients and rounds.
//! Correlated or Markov-modulated availability plugs in through
//! [`ConfigurationProcess`]; [`MarkovProcess`] takes a user-supplied
//! transition matrix over explicit configurations.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rate_region::{ConfigurationDistribution, ConfigurationOutcome};
use crate::rng::StreamRng;

/// Largest client count the oracle will enumerate (2^16 patterns).
pub const MAX_ENUMERABLE_CLIENTS: usize = 16;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClientId(pub usize);

impl ClientId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Bit mask of a client set; only valid for ids below 64.
pub fn mask_of(ids: &[ClientId]) -> Option<u64> {
    ids.iter().try_fold(0u64, |m, id| {
        if id.0 < 64 {
            Some(m | (1u64 << id.0))
        } else {
            None
        }
    })
}

pub fn ids_of_mask(mask: u64) -> Vec<ClientId> {
    (0..64)
        .filter(|i| mask & (1u64 << i) != 0)
        .map(ClientId)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvailabilityKind {
    Always,
    Scarce,
    HomeDevices,
    Smartphones,
    Uneven,
}

/// User-facing parameters of an availability model. Defaults follow the
/// experimental setup: `q = 0.2` for Scarce, lognormal sigma 0.5 (Home
/// devices) or 0.25 (Smartphones), `f(t) = 0.4 sin(.) + 0.5` over a
/// 24-step period, and a mean availability of 0.5 for Uneven.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvailabilityParams {
    pub kind: AvailabilityKind,
    #[serde(default = "default_scarce_q")]
    pub scarce_q: f64,
    /// `None` picks the per-kind default.
    #[serde(default)]
    pub lognormal_sigma: Option<f64>,
    #[serde(default = "default_amplitude")]
    pub sine_amplitude: f64,
    #[serde(default = "default_offset")]
    pub sine_offset: f64,
    #[serde(default = "default_period")]
    pub period_steps: usize,
    #[serde(default = "default_uneven_mean")]
    pub uneven_mean: f64,
}

fn default_scarce_q() -> f64 {
    0.2
}
fn default_amplitude() -> f64 {
    0.4
}
fn default_offset() -> f64 {
    0.5
}
fn default_period() -> usize {
    24
}
fn default_uneven_mean() -> f64 {
    0.5
}

impl AvailabilityParams {
    pub fn new(kind: AvailabilityKind) -> Self {
        Self {
            kind,
            scarce_q: default_scarce_q(),
            lognormal_sigma: None,
            sine_amplitude: default_amplitude(),
            sine_offset: default_offset(),
            period_steps: default_period(),
            uneven_mean: default_uneven_mean(),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.lognormal_sigma.unwrap_or(match self.kind {
            AvailabilityKind::Smartphones => 0.25,
            _ => 0.5,
        })
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(0.0..=1.0).contains(&self.scarce_q) {
            errors.push(format!("availability.scarce_q must be in [0,1], got {}", self.scarce_q));
        }
        if !(self.sigma() > 0.0 && self.sigma().is_finite()) {
            errors.push(format!("availability.lognormal_sigma must be positive, got {}", self.sigma()));
        }
        if self.period_steps == 0 {
            errors.push("availability.period_steps must be at least 1".into());
        }
        if !(self.uneven_mean > 0.0 && self.uneven_mean <= 1.0) {
            errors.push(format!("availability.uneven_mean must be in (0,1], got {}", self.uneven_mean));
        }
        if !self.sine_amplitude.is_finite() || !self.sine_offset.is_finite() {
            errors.push("availability sine parameters must be finite".into());
        }
    }
}

/// Per-client availability probabilities for a model.
///
/// `p` are the client weights; only Uneven reads their values.
pub fn derive_client_probs(
    params: &AvailabilityParams,
    p: &[f64],
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let n = p.len();
    if n == 0 {
        return Err(Error::invalid("availability model needs at least one client"));
    }
    let mut errors = Vec::new();
    params.validate(&mut errors);
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    match params.kind {
        AvailabilityKind::Always => Ok(vec![1.0; n]),
        AvailabilityKind::Scarce => Ok(vec![params.scarce_q; n]),
        AvailabilityKind::HomeDevices | AvailabilityKind::Smartphones => {
            let dist = LogNormal::new(0.0, params.sigma())
                .map_err(|e| Error::invalid(format!("lognormal: {e}")))?;
            let t: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
            let mut arg = 0;
            for (k, &v) in t.iter().enumerate() {
                if v > t[arg] {
                    arg = k;
                }
            }
            let b = t[arg];
            let below_one = f64::from_bits(1.0f64.to_bits() - 1);
            Ok(t.iter()
                .enumerate()
                .map(|(k, &v)| if k == arg { 1.0 } else { (v / b).min(below_one) })
                .collect())
        }
        AvailabilityKind::Uneven => uneven_probs(p, params.uneven_mean),
    }
}

/// `q_k = min(1, c / p_k)` with `c` chosen so the mean of `q` hits `target`.
fn uneven_probs(p: &[f64], target: f64) -> Result<Vec<f64>> {
    if let Some(k) = p.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!(
            "Uneven availability needs p_k > 0, client {k} has {}",
            p[k]
        )));
    }
    let n = p.len();
    if target >= 1.0 {
        return Ok(vec![1.0; n]);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    // the m smallest weights saturate at 1
    let mut tail: f64 = p.iter().map(|v| 1.0 / v).sum();
    let goal = target * n as f64;
    for m in 0..n {
        let c = (goal - m as f64) / tail;
        let pm = p[order[m]];
        if c <= pm {
            return Ok(p.iter().map(|&v| (c / v).min(1.0)).collect());
        }
        tail -= 1.0 / pm;
    }
    Ok(vec![1.0; n])
}

/// A built availability model: parameters plus cached per-client `q_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AvailabilityModel {
    params: AvailabilityParams,
    q: Vec<f64>,
}

impl AvailabilityModel {
    pub fn build(params: AvailabilityParams, p: &[f64], rng: &mut StreamRng) -> Result<Self> {
        let q = derive_client_probs(&params, p, rng)?;
        Ok(Self { params, q })
    }

    /// Model with explicit per-client probabilities (Scarce-like sampling).
    pub fn from_probs(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() || q.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("per-client probabilities must be in [0,1]"));
        }
        Ok(Self {
            params: AvailabilityParams::new(AvailabilityKind::Scarce),
            q,
        })
    }

    pub fn params(&self) -> &AvailabilityParams {
        &self.params
    }

    pub fn kind(&self) -> AvailabilityKind {
        self.params.kind
    }

    pub fn num_clients(&self) -> usize {
        self.q.len()
    }

    pub fn client_probs(&self) -> &[f64] {
        &self.q
    }

    /// Time modulation `f_t`; identically 1 except for Smartphones.
    pub fn modulation(&self, t: usize) -> f64 {
        match self.params.kind {
            AvailabilityKind::Smartphones => {
                let period = self.params.period_steps.max(1);
                let phase = 2.0 * PI * (t % period) as f64 / period as f64;
                (self.params.sine_amplitude * phase.sin() + self.params.sine_offset).clamp(0.0, 1.0)
            }
            _ => 1.0,
        }
    }

    pub fn prob(&self, k: usize, t: usize) -> f64 {
        self.q[k] * self.modulation(t)
    }

    /// Long-run availability frequency of client `k` (averages `f_t` over
    /// one period).
    pub fn long_run_prob(&self, k: usize) -> f64 {
        match self.params.kind {
            AvailabilityKind::Smartphones => {
                let period = self.params.period_steps.max(1);
                (0..period).map(|t| self.prob(k, t)).sum::<f64>() / period as f64
            }
            _ => self.q[k],
        }
    }

    pub fn is_stationary(&self) -> bool {
        self.params.kind != AvailabilityKind::Smartphones
    }

    pub fn sample_available(&self, t: usize, rng: &mut StreamRng) -> Vec<ClientId> {
        let f = self.modulation(t);
        let mut out = Vec::new();
        for (k, &q) in self.q.iter().enumerate() {
            // one draw per client per round, whatever the outcome
            let u: f64 = rng.random();
            if u < q * f {
                out.push(ClientId(k));
            }
        }
        out
    }

    pub fn sample_round(
        &self,
        capacity: &CapacitySchedule,
        t: usize,
        rng: &mut StreamRng,
    ) -> ConfigurationSample {
        ConfigurationSample {
            round: t,
            available: self.sample_available(t, rng),
            capacity: capacity.at(t),
        }
    }
}

/// Communication capacity `K_t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CapacitySchedule {
    Constant(usize),
    /// Cycled when `t` runs past the end of the list.
    PerRound(Vec<usize>),
}

impl Default for CapacitySchedule {
    fn default() -> Self {
        CapacitySchedule::Constant(10)
    }
}

impl CapacitySchedule {
    pub fn at(&self, t: usize) -> usize {
        match self {
            CapacitySchedule::Constant(k) => *k,
            CapacitySchedule::PerRound(list) if list.is_empty() => 0,
            CapacitySchedule::PerRound(list) => list[t % list.len()],
        }
    }

    /// Long-run frequency of each capacity value, sorted by value.
    pub fn frequencies(&self) -> Vec<(usize, f64)> {
        match self {
            CapacitySchedule::Constant(k) => vec![(*k, 1.0)],
            CapacitySchedule::PerRound(list) if list.is_empty() => vec![(0, 1.0)],
            CapacitySchedule::PerRound(list) => {
                let mut counts = std::collections::BTreeMap::new();
                for &k in list {
                    *counts.entry(k).or_insert(0usize) += 1;
                }
                counts
                    .into_iter()
                    .map(|(k, c)| (k, c as f64 / list.len() as f64))
                    .collect()
            }
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if let CapacitySchedule::PerRound(list) = self {
            if list.is_empty() {
                errors.push("capacity.per_round must not be empty".into());
            }
        }
    }
}

/// One round's realized configuration: who is available and how many may
/// be selected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigurationSample {
    pub round: usize,
    /// Sorted by id.
    pub available: Vec<ClientId>,
    pub capacity: usize,
}

impl ConfigurationSample {
    pub fn new(round: usize, mut available: Vec<ClientId>, capacity: usize) -> Self {
        available.sort_unstable();
        available.dedup();
        Self {
            round,
            available,
            capacity,
        }
    }

    pub fn available_mask(&self) -> Option<u64> {
        mask_of(&self.available)
    }

    pub fn is_feasible(&self, set: &[ClientId]) -> bool {
        set.len() <= self.capacity && set.iter().all(|c| self.available.binary_search(c).is_ok())
    }
}

/// Source of per-round configurations for the simulator.
pub trait ConfigurationProcess: Send {
    fn num_clients(&self) -> usize;

    fn sample(&mut self, t: usize, rng: &mut StreamRng) -> ConfigurationSample;

    /// Stationary configuration distribution for the rate-region oracle.
    fn stationary_distribution(&self) -> Result<ConfigurationDistribution>;
}

/// Independent per-client availability with a capacity schedule.
#[derive(Debug, Clone)]
pub struct IndependentProcess {
    pub model: AvailabilityModel,
    pub capacity: CapacitySchedule,
}

impl IndependentProcess {
    pub fn new(model: AvailabilityModel, capacity: CapacitySchedule) -> Self {
        Self { model, capacity }
    }
}

impl ConfigurationProcess for IndependentProcess {
    fn num_clients(&self) -> usize {
        self.model.num_clients()
    }

    fn sample(&mut self, t: usize, rng: &mut StreamRng) -> ConfigurationSample {
        self.model.sample_round(&self.capacity, t, rng)
    }

    fn stationary_distribution(&self) -> Result<ConfigurationDistribution> {
        if !self.model.is_stationary() {
            return Err(Error::UnsupportedOracle(
                "Smartphones availability is time-modulated".into(),
            ));
        }
        independent_distribution(self.model.client_probs(), &self.capacity)
    }
}

/// Enumerates independent Bernoulli availability (N at most 16) crossed with
/// the long-run capacity frequencies.
pub fn independent_distribution(
    q: &[f64],
    capacity: &CapacitySchedule,
) -> Result<ConfigurationDistribution> {
    let n = q.len();
    if n == 0 || n > MAX_ENUMERABLE_CLIENTS {
        return Err(Error::UnsupportedOracle(format!(
            "{n} clients; enumeration supports 1..={MAX_ENUMERABLE_CLIENTS}"
        )));
    }
    let caps = capacity.frequencies();
    let mut outcomes = Vec::new();
    for mask in 0u64..(1u64 << n) {
        let mut prob = 1.0;
        for (k, &qk) in q.iter().enumerate() {
            prob *= if mask & (1 << k) != 0 { qk } else { 1.0 - qk };
        }
        if prob == 0.0 {
            continue;
        }
        for &(k, w) in &caps {
            outcomes.push(ConfigurationOutcome {
                available: mask,
                capacity: k,
                prob: prob * w,
            });
        }
    }
    ConfigurationDistribution::new(n, outcomes)
}

/// The two-client fixture: independent availability with marginals 0.375
/// and 0.8 and room for one client per round.
pub fn two_client_example() -> ConfigurationDistribution {
    let outcomes = vec![
        ConfigurationOutcome { available: 0b11, capacity: 1, prob: 0.3 },
        ConfigurationOutcome { available: 0b01, capacity: 1, prob: 0.075 },
        ConfigurationOutcome { available: 0b10, capacity: 1, prob: 0.5 },
        ConfigurationOutcome { available: 0b00, capacity: 1, prob: 0.125 },
    ];
    ConfigurationDistribution::new(2, outcomes).expect("fixture is a valid distribution")
}

/// I.i.d. draws from an explicit configuration distribution.
#[derive(Debug, Clone)]
pub struct EnumeratedProcess {
    dist: ConfigurationDistribution,
    cumulative: Vec<f64>,
}

impl EnumeratedProcess {
    pub fn new(dist: ConfigurationDistribution) -> Self {
        let mut acc = 0.0;
        let cumulative = dist
            .outcomes()
            .iter()
            .map(|o| {
                acc += o.prob;
                acc
            })
            .collect();
        Self { dist, cumulative }
    }

    pub fn distribution(&self) -> &ConfigurationDistribution {
        &self.dist
    }
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    let total = *cumulative.last().unwrap_or(&1.0);
    let x = u * total;
    cumulative
        .iter()
        .position(|&c| x < c)
        .unwrap_or(cumulative.len().saturating_sub(1))
}

impl ConfigurationProcess for EnumeratedProcess {
    fn num_clients(&self) -> usize {
        self.dist.num_clients()
    }

    fn sample(&mut self, t: usize, rng: &mut StreamRng) -> ConfigurationSample {
        let o = &self.dist.outcomes()[pick(&self.cumulative, rng.random())];
        ConfigurationSample::new(t, ids_of_mask(o.available), o.capacity)
    }

    fn stationary_distribution(&self) -> Result<ConfigurationDistribution> {
        Ok(self.dist.clone())
    }
}

/// Markov-modulated configurations with a user-supplied transition matrix.
#[derive(Debug, Clone)]
pub struct MarkovProcess {
    n: usize,
    states: Vec<(u64, usize)>,
    cumulative: Vec<Vec<f64>>,
    transition: Vec<Vec<f64>>,
    current: usize,
}

impl MarkovProcess {
    /// `states` are `(availability mask, capacity)` pairs; row `i` of
    /// `transition` is the next-state law from state `i`.
    pub fn new(
        n: usize,
        states: Vec<(u64, usize)>,
        transition: Vec<Vec<f64>>,
        initial: usize,
    ) -> Result<Self> {
        let s = states.len();
        if s == 0 || transition.len() != s || initial >= s {
            return Err(Error::invalid("transition matrix must be square over the states"));
        }
        if n == 0 || n > 64 || states.iter().any(|&(m, _)| n < 64 && m >> n != 0) {
            return Err(Error::invalid("state masks must fit the client count"));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != s || row.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::invalid(format!("transition row {i} is malformed")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("transition row {i} sums to {sum}")));
            }
        }
        let cumulative = transition
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|v| {
                        acc += v;
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            n,
            states,
            cumulative,
            transition,
            current: initial,
        })
    }
}

impl ConfigurationProcess for MarkovProcess {
    fn num_clients(&self) -> usize {
        self.n
    }

    fn sample(&mut self, t: usize, rng: &mut StreamRng) -> ConfigurationSample {
        if t > 0 {
            self.current = pick(&self.cumulative[self.current], rng.random());
        }
        let (mask, cap) = self.states[self.current];
        ConfigurationSample::new(t, ids_of_mask(mask), cap)
    }

    /// Power iteration on the lazy chain `(I + P) / 2`, which shares the
    /// stationary law and converges for any irreducible chain.
    fn stationary_distribution(&self) -> Result<ConfigurationDistribution> {
        if self.n > MAX_ENUMERABLE_CLIENTS {
            return Err(Error::UnsupportedOracle(format!("{} clients", self.n)));
        }
        let s = self.states.len();
        let mut pi = vec![1.0 / s as f64; s];
        for _ in 0..100_000 {
            let mut next = vec![0.0; s];
            for i in 0..s {
                next[i] += 0.5 * pi[i];
                for (n, t) in next.iter_mut().zip(&self.transition[i]) {
                    *n += 0.5 * pi[i] * t;
                }
            }
            let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if diff < 1e-15 {
                break;
            }
        }
        let total: f64 = pi.iter().sum();
        let mut merged: std::collections::BTreeMap<(u64, usize), f64> = Default::default();
        for (i, &(mask, cap)) in self.states.iter().enumerate() {
            *merged.entry((mask, cap)).or_default() += pi[i] / total;
        }
        let outcomes = merged
            .into_iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|((available, capacity), prob)| ConfigurationOutcome { available, capacity, prob })
            .collect();
        ConfigurationDistribution::new(self.n, outcomes)
    }
}
