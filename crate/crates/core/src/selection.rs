//! Server-side client selection: F3AST, FedAvg-style weighted sampling,
//! Power-of-Choice and static configuration-dependent policy tables, plus
//! the exponentially smoothed participation-rate tracker.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::availability::{ids_of_mask, mask_of, ClientId, ConfigurationSample};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const DEFAULT_BETA: f64 = 0.001;
pub const DEFAULT_R_MIN: f64 = 1e-4;

/// Which variance surrogate F3AST minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// `H(r) = sum p_k^2 / r_k`
    #[default]
    Uncorrelated,
    /// `H(r) = sum p_k / r_k`
    PositivelyCorrelated,
}

/// The surrogate objective `H` over participation rates.
#[derive(Debug, Clone, PartialEq)]
pub struct HObjective {
    p: Vec<f64>,
    mode: CorrelationMode,
}

impl HObjective {
    pub fn new(p: Vec<f64>, mode: CorrelationMode) -> Result<Self> {
        if p.is_empty() || p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("weights must be non-negative and finite"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("weights must sum to 1, got {sum}")));
        }
        Ok(Self { p, mode })
    }

    pub fn weights(&self) -> &[f64] {
        &self.p
    }

    pub fn mode(&self) -> CorrelationMode {
        self.mode
    }

    pub fn num_clients(&self) -> usize {
        self.p.len()
    }

    pub(crate) fn numerator(&self, k: usize) -> f64 {
        match self.mode {
            CorrelationMode::Uncorrelated => self.p[k] * self.p[k],
            CorrelationMode::PositivelyCorrelated => self.p[k],
        }
    }

    fn check(&self, r: &[f64]) -> Result<()> {
        if r.len() != self.p.len() {
            return Err(Error::DimensionMismatch {
                expected: self.p.len(),
                got: r.len(),
            });
        }
        if let Some(k) = r.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Domain(format!("r_{k} = {} is not positive", r[k])));
        }
        Ok(())
    }

    pub fn value(&self, r: &[f64]) -> Result<f64> {
        self.check(r)?;
        Ok((0..r.len()).map(|k| self.numerator(k) / r[k]).sum())
    }

    pub fn gradient(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check(r)?;
        Ok((0..r.len()).map(|k| -self.numerator(k) / (r[k] * r[k])).collect())
    }

    /// Per-client marginal utility `-dH/dr_k`.
    pub fn utilities(&self, r: &[f64]) -> Result<Vec<f64>> {
        Ok(self.gradient(r)?.into_iter().map(|g| -g).collect())
    }
}

pub fn h_value(obj: &HObjective, r: &[f64]) -> Result<f64> {
    obj.value(r)
}

pub fn h_gradient(obj: &HObjective, r: &[f64]) -> Result<Vec<f64>> {
    obj.gradient(r)
}

/// Exponentially smoothed participation rate `r(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationRate {
    r: Vec<f64>,
    beta: f64,
    r_min: f64,
}

impl ParticipationRate {
    /// Uniform `1/N` start.
    pub fn uniform(n: usize, beta: f64, r_min: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("participation rate needs at least one client"));
        }
        Self::with_initial(vec![1.0 / n as f64; n], beta, r_min)
    }

    pub fn with_initial(r: Vec<f64>, beta: f64, r_min: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::invalid(format!("beta must be in (0,1), got {beta}")));
        }
        if !(r_min > 0.0 && r_min <= 1.0) {
            return Err(Error::invalid(format!("r_min must be in (0,1], got {r_min}")));
        }
        if r.is_empty() || r.iter().any(|&v| !(v >= r_min && v <= 1.0)) {
            return Err(Error::invalid("initial rates must lie in [r_min, 1]"));
        }
        Ok(Self { r, beta, r_min })
    }

    pub fn rates(&self) -> &[f64] {
        &self.r
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    /// `r <- (1 - beta) r + beta 1_S`, then floor at `r_min`.
    pub fn smooth_update(&mut self, selected: &[ClientId]) {
        let keep = 1.0 - self.beta;
        for v in self.r.iter_mut() {
            *v *= keep;
        }
        for c in selected {
            if let Some(v) = self.r.get_mut(c.0) {
                *v += self.beta;
            }
        }
        for v in self.r.iter_mut() {
            *v = v.clamp(self.r_min, 1.0);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionResult {
    /// Sorted by id.
    pub selected: Vec<ClientId>,
    pub utilities: Option<Vec<f64>>,
}

impl SelectionResult {
    fn sorted(mut selected: Vec<ClientId>) -> Self {
        selected.sort_unstable();
        Self {
            selected,
            utilities: None,
        }
    }
}

/// Picks the `k` entries of `ids` with the largest score; ties go to the
/// lower id.
fn top_k(ids: &[ClientId], score: impl Fn(ClientId) -> f64, k: usize) -> Vec<ClientId> {
    let mut ranked: Vec<(f64, ClientId)> = ids.iter().map(|&c| (score(c), c)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<ClientId> = ranked.into_iter().take(k).map(|(_, c)| c).collect();
    out.sort_unstable();
    out
}

/// Greedy maximizer of `-grad H(r) . 1_S` over the feasible sets of `config`.
pub fn f3ast_select(
    obj: &HObjective,
    rate: &ParticipationRate,
    config: &ConfigurationSample,
) -> Result<SelectionResult> {
    let u = obj.utilities(rate.rates())?;
    if let Some(c) = config.available.iter().find(|c| c.0 >= u.len()) {
        return Err(Error::invalid(format!("available client {c} out of range")));
    }
    let k = config.capacity.min(config.available.len());
    let selected = top_k(&config.available, |c| u[c.0], k);
    Ok(SelectionResult {
        selected,
        utilities: Some(u),
    })
}

/// Draws `count` distinct clients from `pool`, each draw proportional to
/// `p` renormalized over what is left.
fn weighted_without_replacement(
    p: &[f64],
    pool: &[ClientId],
    count: usize,
    rng: &mut StreamRng,
) -> Vec<ClientId> {
    let mut remaining: Vec<ClientId> = pool.to_vec();
    let mut out = Vec::with_capacity(count);
    while out.len() < count && !remaining.is_empty() {
        let mass: f64 = remaining.iter().map(|c| p.get(c.0).copied().unwrap_or(0.0)).sum();
        if !(mass > 0.0) {
            break;
        }
        let x = rng.random::<f64>() * mass;
        let mut acc = 0.0;
        let mut pick = remaining.len() - 1;
        for (i, c) in remaining.iter().enumerate() {
            let w = p.get(c.0).copied().unwrap_or(0.0);
            acc += w;
            if x < acc && w > 0.0 {
                pick = i;
                break;
            }
        }
        // guard the round-off tail against landing on a zero-weight client
        while p.get(remaining[pick].0).copied().unwrap_or(0.0) <= 0.0 && pick > 0 {
            pick -= 1;
        }
        out.push(remaining.remove(pick));
    }
    out
}

/// FedAvg-style sampling of available clients proportional to `p`.
/// Zero mass over the available set yields an empty selection.
pub fn fedavg_select(
    p: &[f64],
    config: &ConfigurationSample,
    rng: &mut StreamRng,
) -> SelectionResult {
    let k = config.capacity.min(config.available.len());
    SelectionResult::sorted(weighted_without_replacement(p, &config.available, k, rng))
}

/// Power-of-Choice: sample `d` candidates proportional to `p`, keep the `m`
/// with the highest current loss.
pub fn poc_select(
    p: &[f64],
    config: &ConfigurationSample,
    mut losses: impl FnMut(ClientId) -> f64,
    d: usize,
    m: usize,
    rng: &mut StreamRng,
) -> SelectionResult {
    let candidates = weighted_without_replacement(p, &config.available, d.min(config.available.len()), rng);
    let m = m.min(candidates.len());
    if m == 0 {
        return SelectionResult::default();
    }
    let scored: Vec<(ClientId, f64)> = candidates.iter().map(|&c| (c, losses(c))).collect();
    let selected = top_k(
        &candidates,
        |c| scored.iter().find(|(id, _)| *id == c).map(|s| s.1).unwrap_or(f64::NEG_INFINITY),
        m,
    );
    SelectionResult {
        selected,
        utilities: None,
    }
}

/// Key of a configuration in a [`PolicyTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConfigKey {
    pub available: u64,
    pub capacity: usize,
}

impl std::fmt::Display for ConfigKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(available={:#b}, capacity={})", self.available, self.capacity)
    }
}

/// Explicit `f_{C,S}`: a categorical law over feasible subsets (bit masks)
/// for each configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicyTable {
    entries: BTreeMap<ConfigKey, Vec<(u64, f64)>>,
}

impl PolicyTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the law for one configuration after checking feasibility and
    /// normalization.
    pub fn insert(&mut self, key: ConfigKey, choices: Vec<(u64, f64)>) -> Result<()> {
        if choices.is_empty() {
            return Err(Error::invalid(format!("no choices for configuration {key}")));
        }
        let mut total = 0.0;
        for &(set, prob) in &choices {
            if !(prob >= 0.0) || !prob.is_finite() {
                return Err(Error::invalid(format!("negative probability in {key}")));
            }
            if set & !key.available != 0 || set.count_ones() as usize > key.capacity {
                return Err(Error::invalid(format!("set {set:#b} infeasible in {key}")));
            }
            total += prob;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("probabilities for {key} sum to {total}")));
        }
        self.entries.insert(key, choices);
        Ok(())
    }

    /// Deterministic rule: one set per configuration.
    pub fn deterministic(
        keys: impl IntoIterator<Item = ConfigKey>,
        rule: impl Fn(ConfigKey) -> u64,
    ) -> Result<Self> {
        let mut t = Self::new();
        for key in keys {
            t.insert(key, vec![(rule(key), 1.0)])?;
        }
        Ok(t)
    }

    pub fn get(&self, key: &ConfigKey) -> Option<&[(u64, f64)]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn lookup(&self, key: &ConfigKey) -> Result<&[(u64, f64)]> {
        self.get(key)
            .ok_or_else(|| Error::PolicyIncomplete(key.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ConfigKey, &Vec<(u64, f64)>)> {
        self.entries.iter()
    }

    /// `lambda * self + (1 - lambda) * other` on shared keys.
    pub fn mix(&self, other: &PolicyTable, lambda: f64) -> Result<PolicyTable> {
        let mut out = PolicyTable::new();
        for (key, a) in &self.entries {
            let b = other.lookup(key)?;
            let mut merged: BTreeMap<u64, f64> = BTreeMap::new();
            for &(s, p) in a {
                *merged.entry(s).or_default() += lambda * p;
            }
            for &(s, p) in b {
                *merged.entry(s).or_default() += (1.0 - lambda) * p;
            }
            out.insert(*key, merged.into_iter().collect())?;
        }
        Ok(out)
    }
}

/// Samples from the table's law for the current configuration.
pub fn fixed_policy_select(
    table: &PolicyTable,
    config: &ConfigurationSample,
    rng: &mut StreamRng,
) -> Result<SelectionResult> {
    let available = config
        .available_mask()
        .ok_or_else(|| Error::invalid("policy tables support client ids below 64"))?;
    let key = ConfigKey {
        available,
        capacity: config.capacity,
    };
    let choices = table.lookup(&key)?;
    let x: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = choices.last().map(|c| c.0).unwrap_or(0);
    for &(set, prob) in choices {
        acc += prob;
        if x < acc && prob > 0.0 {
            chosen = set;
            break;
        }
    }
    Ok(SelectionResult::sorted(ids_of_mask(chosen)))
}

/// Mask helper re-exported for table construction.
pub fn set_mask(ids: &[ClientId]) -> Option<u64> {
    mask_of(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedStreams, Stream};

    fn ids(v: &[usize]) -> Vec<ClientId> {
        v.iter().map(|&i| ClientId(i)).collect()
    }

    fn rng(seed: u64) -> StreamRng {
        SeedStreams::new(seed).stream(Stream::Policy)
    }

    #[test]
    fn h_values() {
        let u = HObjective::new(vec![0.5, 0.5], CorrelationMode::Uncorrelated).unwrap();
        let c = HObjective::new(vec![0.5, 0.5], CorrelationMode::PositivelyCorrelated).unwrap();
        assert!((u.value(&[1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((c.value(&[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((u.value(&[0.375, 0.5]).unwrap() - 7.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn h_gradient_hand_values() {
        let u = HObjective::new(vec![0.5, 0.5], CorrelationMode::Uncorrelated).unwrap();
        let g = u.gradient(&[0.375, 0.5]).unwrap();
        assert!((g[0] + 0.25 / (0.375 * 0.375)).abs() < 1e-12);
        assert!((g[0] + 16.0 / 9.0).abs() < 1e-12);
        assert!((g[1] + 1.0).abs() < 1e-12);
        let g = u.gradient(&[0.3, 0.3]).unwrap();
        assert_eq!(g[0], g[1]);
    }

    #[test]
    fn h_domain_error() {
        let u = HObjective::new(vec![0.5, 0.5], CorrelationMode::Uncorrelated).unwrap();
        assert!(matches!(u.value(&[0.0, 1.0]), Err(Error::Domain(_))));
        assert!(matches!(u.gradient(&[-0.1, 1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn f3ast_picks_largest_utilities() {
        let obj = HObjective::new(vec![0.5, 0.3, 0.2], CorrelationMode::Uncorrelated).unwrap();
        let rate = ParticipationRate::with_initial(vec![0.2, 0.5, 0.5], 0.1, 1e-4).unwrap();
        let cfg = ConfigurationSample::new(0, ids(&[0, 1, 2]), 2);
        let res = f3ast_select(&obj, &rate, &cfg).unwrap();
        assert_eq!(res.selected, ids(&[0, 1]));
        let u = res.utilities.unwrap();
        assert!((u[0] - 6.25).abs() < 1e-12);
        assert!((u[1] - 0.36).abs() < 1e-12);
        assert!((u[2] - 0.16).abs() < 1e-12);
    }

    #[test]
    fn f3ast_capacity_zero_and_ties() {
        let obj = HObjective::new(vec![1.0 / 3.0; 3], CorrelationMode::Uncorrelated).unwrap();
        let rate = ParticipationRate::uniform(3, 0.1, 1e-4).unwrap();
        let cfg = ConfigurationSample::new(0, ids(&[0, 1, 2]), 0);
        assert!(f3ast_select(&obj, &rate, &cfg).unwrap().selected.is_empty());
        let cfg = ConfigurationSample::new(0, ids(&[2, 0, 1]), 2);
        assert_eq!(f3ast_select(&obj, &rate, &cfg).unwrap().selected, ids(&[0, 1]));
    }

    #[test]
    fn f3ast_selects_everyone_when_capacity_exceeds_availability() {
        let obj = HObjective::new(vec![0.25; 4], CorrelationMode::Uncorrelated).unwrap();
        let rate = ParticipationRate::uniform(4, 0.1, 1e-4).unwrap();
        let cfg = ConfigurationSample::new(0, ids(&[1, 3]), 10);
        assert_eq!(f3ast_select(&obj, &rate, &cfg).unwrap().selected, ids(&[1, 3]));
        let cfg = ConfigurationSample::new(0, vec![], 10);
        assert!(f3ast_select(&obj, &rate, &cfg).unwrap().selected.is_empty());
    }

    #[test]
    fn smooth_update_arithmetic() {
        let mut r = ParticipationRate::with_initial(vec![0.4, 0.6], 0.1, 1e-4).unwrap();
        r.smooth_update(&ids(&[0]));
        assert!((r.rates()[0] - 0.46).abs() < 1e-12);
        assert!((r.rates()[1] - 0.54).abs() < 1e-12);
    }

    #[test]
    fn smooth_update_fixed_point() {
        let mut r = ParticipationRate::with_initial(vec![1.0, 1e-4, 1.0], 0.01, 1e-4).unwrap();
        for _ in 0..100 {
            r.smooth_update(&ids(&[0, 2]));
        }
        assert_eq!(r.rates(), &[1.0, 1e-4, 1.0]);
    }

    #[test]
    fn fedavg_forced_and_exhaustive() {
        let p = [0.2, 0.3, 0.5];
        let cfg = ConfigurationSample::new(0, ids(&[1]), 3);
        assert_eq!(fedavg_select(&p, &cfg, &mut rng(0)).selected, ids(&[1]));
        let cfg = ConfigurationSample::new(0, ids(&[0, 2]), 5);
        assert_eq!(fedavg_select(&p, &cfg, &mut rng(0)).selected, ids(&[0, 2]));
        let cfg = ConfigurationSample::new(0, ids(&[0, 1, 2]), 2);
        let s = fedavg_select(&p, &cfg, &mut rng(0)).selected;
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn fedavg_zero_mass_is_empty() {
        let p = [0.0, 0.0, 1.0];
        let cfg = ConfigurationSample::new(0, ids(&[0, 1]), 1);
        assert!(fedavg_select(&p, &cfg, &mut rng(0)).selected.is_empty());
        // zero-weight clients are never drawn while mass remains
        let cfg = ConfigurationSample::new(0, ids(&[0, 2]), 2);
        assert_eq!(fedavg_select(&p, &cfg, &mut rng(0)).selected, ids(&[2]));
    }

    #[test]
    fn poc_edge_cases() {
        let p = [0.25; 4];
        let cfg = ConfigurationSample::new(0, ids(&[0, 1, 2, 3]), 4);
        let losses = |c: ClientId| c.0 as f64;
        assert!(poc_select(&p, &cfg, losses, 3, 0, &mut rng(1)).selected.is_empty());
        let all = poc_select(&p, &cfg, losses, 4, 4, &mut rng(1));
        assert_eq!(all.selected, ids(&[0, 1, 2, 3]));
        let top = poc_select(&p, &cfg, losses, 4, 2, &mut rng(1));
        assert_eq!(top.selected, ids(&[2, 3]));
    }

    #[test]
    fn policy_table_validation() {
        let mut t = PolicyTable::new();
        let key = ConfigKey { available: 0b11, capacity: 1 };
        assert!(t.insert(key, vec![(0b11, 1.0)]).is_err());
        assert!(t.insert(key, vec![(0b01, 0.5), (0b10, 0.4)]).is_err());
        assert!(t.insert(key, vec![(0b100, 1.0)]).is_err());
        assert!(t.insert(key, vec![(0b01, 0.5), (0b10, 0.5)]).is_ok());
    }

    #[test]
    fn fixed_policy_deterministic_and_missing() {
        let key = ConfigKey { available: 0b11, capacity: 1 };
        let t = PolicyTable::deterministic([key], |_| 0b10).unwrap();
        let cfg = ConfigurationSample::new(0, ids(&[0, 1]), 1);
        for s in 0..20 {
            assert_eq!(fixed_policy_select(&t, &cfg, &mut rng(s)).unwrap().selected, ids(&[1]));
        }
        let other = ConfigurationSample::new(0, ids(&[0]), 1);
        assert!(matches!(
            fixed_policy_select(&t, &other, &mut rng(0)),
            Err(Error::PolicyIncomplete(_))
        ));
    }
}
