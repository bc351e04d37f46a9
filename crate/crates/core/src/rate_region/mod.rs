//! Ground-truth oracle for small, enumerable configuration distributions.
//!
//! The achievable rate region is the image of all static
//! configuration-dependent policies under
//! `r = sum_C pi(C) sum_S f_{C,S} 1_S`. It is a polytope whose vertices
//! come from deterministic per-configuration choices, so everything here
//! works through [`linear_max_oracle`].

mod frank_wolfe;

use std::cell::RefCell;

use log::warn;
use serde::Serialize;

use crate::availability::{ids_of_mask, ClientId};
use crate::error::{Error, Result};
use crate::fedtrain::{aggregate_debias_with, ClientUpdate};
use crate::selection::{ConfigKey, HObjective, PolicyTable};
use frank_wolfe::{bisect_derivative, dot, SmoothObjective, SquaredDistance};

/// One configuration `C = (A, K)` with its stationary probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfigurationOutcome {
    /// Bit `k` set when client `k` is available.
    pub available: u64,
    pub capacity: usize,
    pub prob: f64,
}

impl ConfigurationOutcome {
    pub fn key(&self) -> ConfigKey {
        ConfigKey {
            available: self.available,
            capacity: self.capacity,
        }
    }
}

/// Stationary law `pi` over a finite set of configurations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigurationDistribution {
    n: usize,
    outcomes: Vec<ConfigurationOutcome>,
}

impl ConfigurationDistribution {
    pub fn new(n: usize, outcomes: Vec<ConfigurationOutcome>) -> Result<Self> {
        if n == 0 || n > 64 {
            return Err(Error::invalid(format!("client count {n} outside 1..=64")));
        }
        let mut total = 0.0;
        for o in &outcomes {
            if !(o.prob >= 0.0) {
                return Err(Error::invalid(format!("negative probability {}", o.prob)));
            }
            if n < 64 && o.available >> n != 0 {
                return Err(Error::invalid(format!("pattern {:#b} exceeds {n} clients", o.available)));
            }
            total += o.prob;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("probabilities sum to {total}")));
        }
        let mut keys: Vec<ConfigKey> = outcomes.iter().map(ConfigurationOutcome::key).collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("configuration patterns must be distinct"));
        }
        Ok(Self { n, outcomes })
    }

    pub fn num_clients(&self) -> usize {
        self.n
    }

    pub fn outcomes(&self) -> &[ConfigurationOutcome] {
        &self.outcomes
    }

    /// `P(A_k = 1)` for every client.
    pub fn availability_marginals(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n];
        for o in &self.outcomes {
            for (k, mk) in m.iter_mut().enumerate() {
                if o.available & (1 << k) != 0 {
                    *mk += o.prob;
                }
            }
        }
        m
    }

    /// Probability that client `k` can be selected at all (available with
    /// nonzero capacity).
    pub fn selectable_prob(&self, k: usize) -> f64 {
        self.outcomes
            .iter()
            .filter(|o| o.capacity > 0 && o.available & (1 << k) != 0)
            .map(|o| o.prob)
            .sum()
    }
}

/// The achievable region `R` of a configuration distribution.
#[derive(Debug, Clone)]
pub struct RateRegionModel {
    dist: ConfigurationDistribution,
}

impl RateRegionModel {
    pub fn new(dist: ConfigurationDistribution) -> Self {
        Self { dist }
    }

    pub fn num_clients(&self) -> usize {
        self.dist.num_clients()
    }

    pub fn distribution(&self) -> &ConfigurationDistribution {
        &self.dist
    }

    /// Every `S` with `S` inside `A` and `|S| <= K`, the empty set first.
    pub fn feasible_sets(&self, outcome: usize) -> Vec<u64> {
        let o = &self.dist.outcomes[outcome];
        let mut out = Vec::new();
        let a = o.available;
        // enumerate submasks of a
        let mut s = a;
        loop {
            if s.count_ones() as usize <= o.capacity {
                out.push(s);
            }
            if s == 0 {
                break;
            }
            s = (s - 1) & a;
        }
        out.sort_by_key(|m| (m.count_ones(), *m));
        out
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_clients() {
            return Err(Error::DimensionMismatch {
                expected: self.num_clients(),
                got: v.len(),
            });
        }
        Ok(())
    }
}

fn add_set(r: &mut [f64], set: u64, w: f64) {
    for (k, rk) in r.iter_mut().enumerate() {
        if set & (1 << k) != 0 {
            *rk += w;
        }
    }
}

/// Exact long-run rate of a static policy.
pub fn rate_of_policy(model: &RateRegionModel, table: &PolicyTable) -> Result<Vec<f64>> {
    let mut r = vec![0.0; model.num_clients()];
    for o in model.dist.outcomes() {
        for &(set, f) in table.lookup(&o.key())? {
            add_set(&mut r, set, o.prob * f);
        }
    }
    Ok(r)
}

/// Greedy choice for one configuration: the (at most `K`) available
/// clients with the largest positive entries of `g`, ties to lower index.
fn greedy_set(g: &[f64], available: u64, capacity: usize) -> u64 {
    let mut cand: Vec<usize> = (0..g.len())
        .filter(|&k| available & (1 << k) != 0 && g[k] > 0.0)
        .collect();
    cand.sort_by(|&a, &b| g[b].total_cmp(&g[a]).then(a.cmp(&b)));
    cand.into_iter().take(capacity).fold(0u64, |m, k| m | (1 << k))
}

/// Deterministic table that applies [`greedy_set`] with fixed scores.
pub fn greedy_policy_table(model: &RateRegionModel, g: &[f64]) -> Result<PolicyTable> {
    model.check_len(g)?;
    PolicyTable::deterministic(
        model.dist.outcomes().iter().map(ConfigurationOutcome::key),
        |key| greedy_set(g, key.available, key.capacity),
    )
}

/// Vertex of `R` maximizing `g . r`.
pub fn linear_max_oracle(model: &RateRegionModel, g: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; model.num_clients()];
    for o in model.dist.outcomes() {
        let set = greedy_set(g, o.available, o.capacity);
        add_set(&mut r, set, o.prob);
    }
    r
}

/// `H` restricted to the clients that can participate.
struct RegionH {
    num: Vec<f64>,
}

impl SmoothObjective for RegionH {
    fn value(&self, x: &[f64]) -> f64 {
        self.num
            .iter()
            .zip(x)
            .map(|(&n, &v)| if n > 0.0 { n / v } else { 0.0 })
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.num
            .iter()
            .zip(x)
            .map(|(&n, &v)| if n > 0.0 { -n / (v * v) } else { 0.0 })
            .collect()
    }

    fn line_search(&self, x: &[f64], d: &[f64], t_max: f64) -> f64 {
        let deriv = |t: f64| {
            let mut acc = 0.0;
            for k in 0..x.len() {
                if self.num[k] > 0.0 {
                    let v = x[k] + t * d[k];
                    if v <= 0.0 {
                        return f64::INFINITY;
                    }
                    acc -= self.num[k] * d[k] / (v * v);
                }
            }
            acc
        };
        bisect_derivative(deriv, t_max)
    }
}

/// `H` numerators with never-selectable clients zeroed out.
fn h_numerators(model: &RateRegionModel, obj: &HObjective) -> Vec<f64> {
    (0..model.num_clients())
        .map(|k| if model.dist.selectable_prob(k) > 0.0 { obj.numerator(k) } else { 0.0 })
        .collect()
}

/// Unit directions of the weighted clients; their oracle vertices average
/// to a point with every weighted client strictly positive.
fn start_directions(objective: &RegionH, n: usize) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .filter(|&k| objective.num[k] > 0.0)
        .map(|k| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            e
        })
        .collect();
    if dirs.is_empty() {
        dirs.push(vec![-1.0; n]);
    }
    dirs
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimalRate {
    pub rates: Vec<f64>,
    /// `H(r*)` over the included clients.
    pub value: f64,
    /// Final duality gap; certifies `H(r*) - min H <= gap`.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Clients with positive weight that can never be selected; their `H`
    /// term is unbounded, so they are pinned to zero and left out.
    pub excluded: Vec<ClientId>,
}

/// Minimizes `H` over `R` by pairwise conditional gradient until the
/// duality gap drops to `tol`.
pub fn optimal_rate(model: &RateRegionModel, obj: &HObjective, tol: f64) -> Result<OptimalRate> {
    Ok(solve_h(model, obj, tol)?.0)
}

/// Final active vertices with the oracle direction that produced each.
type ActiveDirections = Vec<(Vec<f64>, f64)>;

fn solve_h(model: &RateRegionModel, obj: &HObjective, tol: f64) -> Result<(OptimalRate, ActiveDirections)> {
    let n = model.num_clients();
    if obj.num_clients() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: obj.num_clients(),
        });
    }
    let excluded: Vec<ClientId> = (0..n)
        .filter(|&k| obj.numerator(k) > 0.0 && model.dist.selectable_prob(k) == 0.0)
        .map(ClientId)
        .collect();
    for c in &excluded {
        warn!("client {c} has positive weight but is never selectable; H is unbounded, excluding it");
    }
    let objective = RegionH {
        num: h_numerators(model, obj),
    };
    let seen = RefCell::new(Vec::<(Vec<f64>, Vec<f64>)>::new());
    let oracle = |g: &[f64]| {
        let v = linear_max_oracle(model, g);
        let mut seen = seen.borrow_mut();
        if !seen.iter().any(|(u, _)| *u == v) {
            seen.push((v.clone(), g.to_vec()));
        }
        v
    };
    let start: Vec<Vec<f64>> = start_directions(&objective, n).iter().map(|g| oracle(g)).collect();
    let out = frank_wolfe::minimize(&objective, oracle, start, 200_000, |s| s.gap <= tol);
    let converged = out.gap <= tol;
    if !converged {
        warn!("optimal_rate stopped with gap {} > tol {tol}", out.gap);
    }
    let seen = seen.into_inner();
    let active = out
        .active
        .vertices
        .iter()
        .zip(&out.active.weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, w)| {
            seen.iter()
                .find(|(u, _)| u == v)
                .map(|(_, g)| (g.clone(), *w))
                .ok_or_else(|| Error::Invariant("active vertex without an oracle direction".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let opt = OptimalRate {
        value: objective.value(&out.x),
        rates: out.x,
        gap: out.gap,
        iterations: out.iterations,
        converged,
        excluded,
    };
    Ok((opt, active))
}

/// A static policy achieving the minimizer of `H` up to the solver gap:
/// the mixture of the greedy tables behind the final active vertices.
pub fn optimal_policy(model: &RateRegionModel, obj: &HObjective, tol: f64) -> Result<(PolicyTable, OptimalRate)> {
    let (opt, active) = solve_h(model, obj, tol)?;
    let mut table: Option<(PolicyTable, f64)> = None;
    for (g, w) in active {
        let t = greedy_policy_table(model, &g)?;
        table = Some(match table {
            None => (t, w),
            Some((acc, mass)) => (acc.mix(&t, mass / (mass + w))?, mass + w),
        });
    }
    let (table, _) = table.ok_or_else(|| Error::Invariant("empty active set".into()))?;
    Ok((table, opt))
}

#[derive(Debug, Clone, Serialize)]
pub struct Membership {
    pub inside: bool,
    /// Distance from the query to the closest point found in `R`.
    pub distance_upper: f64,
    /// Certified lower bound on the distance from the separating direction.
    pub distance_lower: f64,
    pub closest: Vec<f64>,
    /// Unit `g` with `g . r > max_{r' in R} g . r'` when outside.
    pub separating: Option<Vec<f64>>,
}

/// Decides `r in R` up to `tol` by projecting `r` onto `R`.
pub fn membership(model: &RateRegionModel, r: &[f64], tol: f64) -> Result<Membership> {
    model.check_len(r)?;
    let objective = SquaredDistance { target: r };
    let start = vec![linear_max_oracle(model, r)];
    let mut lower = 0.0f64;
    let mut best_dir: Option<Vec<f64>> = None;
    let out = frank_wolfe::minimize(
        &objective,
        |g| linear_max_oracle(model, g),
        start,
        1_000_000,
        |s| {
            let resid: Vec<f64> = r.iter().zip(s.x).map(|(a, b)| a - b).collect();
            let norm = dot(&resid, &resid).sqrt();
            if norm <= tol {
                return true;
            }
            // the oracle vertex maximizes resid . v, so this is a valid cut
            let h: Vec<f64> = resid.iter().map(|v| v / norm).collect();
            let viol = dot(&h, r) - dot(&h, s.fw_vertex);
            if viol > lower {
                lower = viol;
                best_dir = Some(h);
            }
            lower > tol || s.gap <= 1e-30
        },
    );
    let upper = {
        let d: Vec<f64> = r.iter().zip(&out.x).map(|(a, b)| a - b).collect();
        dot(&d, &d).sqrt()
    };
    let inside = upper <= tol;
    Ok(Membership {
        inside,
        distance_upper: upper,
        distance_lower: lower,
        closest: out.x,
        separating: if inside { None } else { best_dir },
    })
}

/// Covariance of the selection indicator vector under a static policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionCovariance {
    pub rates: Vec<f64>,
    /// Row-major `N x N`.
    pub sigma: Vec<Vec<f64>>,
}

pub fn selection_covariance(model: &RateRegionModel, table: &PolicyTable) -> Result<SelectionCovariance> {
    let n = model.num_clients();
    let mut r = vec![0.0; n];
    let mut second = vec![vec![0.0; n]; n];
    for o in model.dist.outcomes() {
        for &(set, f) in table.lookup(&o.key())? {
            let w = o.prob * f;
            if w == 0.0 {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|k| set & (1 << k) != 0).collect();
            for &i in &members {
                r[i] += w;
                for &j in &members {
                    second[i][j] += w;
                }
            }
        }
    }
    let sigma = (0..n)
        .map(|i| (0..n).map(|j| second[i][j] - r[i] * r[j]).collect())
        .collect();
    Ok(SelectionCovariance { rates: r, sigma })
}

/// `Tr(Y Y^T Sigma)`, the client-sampling variance `E|Delta - v_bar|^2`
/// before division by the squared learning rate.
pub fn sampling_variance_exact(y: &[Vec<f64>], cov: &SelectionCovariance) -> Result<f64> {
    let n = cov.sigma.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    let dim = y.first().map_or(0, Vec::len);
    if let Some(row) = y.iter().find(|row| row.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if cov.sigma[i][j] != 0.0 {
                acc += cov.sigma[i][j] * dot(&y[i], &y[j]);
            }
        }
    }
    Ok(acc)
}

/// Rows `(p_k / r_k) v_k` of `Y`.
pub fn importance_rows(p: &[f64], r: &[f64], updates: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if p.len() != r.len() || p.len() != updates.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: updates.len() });
    }
    if let Some(k) = r.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("r_{k} = {} is not positive", r[k])));
    }
    Ok(updates
        .iter()
        .enumerate()
        .map(|(k, v)| v.iter().map(|x| p[k] / r[k] * x).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceBounds {
    /// `4 E^2 G^2 (sum p_k / r_k - 1)`, valid for any policy.
    pub general: f64,
    /// `4 E^2 G^2 (sum p_k^2 / r_k + sum p_k^2)`, valid for the greedy
    /// policy under uncorrelated availability.
    pub uncorrelated: f64,
}

/// Upper bounds on the normalized sampling variance. `local_steps` is the
/// number of local SGD steps `E` and `grad_bound` the gradient-norm bound
/// `G`; the caller multiplies by `eta^2` to compare with raw variances.
pub fn variance_bounds(p: &[f64], r: &[f64], local_steps: usize, grad_bound: f64) -> Result<VarianceBounds> {
    if p.len() != r.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: r.len() });
    }
    if let Some(k) = r.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("r_{k} = {} is not positive", r[k])));
    }
    let scale = 4.0 * (local_steps as f64).powi(2) * grad_bound * grad_bound;
    let inv: f64 = p.iter().zip(r).map(|(a, b)| a / b).sum();
    let sq_inv: f64 = p.iter().zip(r).map(|(a, b)| a * a / b).sum();
    let sq: f64 = p.iter().map(|a| a * a).sum();
    Ok(VarianceBounds {
        general: scale * (inv - 1.0),
        uncorrelated: scale * (sq_inv + sq),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateMoments {
    /// `E[Delta]`
    pub mean: Vec<f64>,
    /// `v_bar = sum_k p_k v_k`
    pub full_participation: Vec<f64>,
    /// `E|Delta - v_bar|^2`
    pub mean_sq_deviation: f64,
}

/// Exact moments of the de-biased aggregate by enumerating every
/// configuration and every set the policy can pick in it.
pub fn aggregate_moments(
    model: &RateRegionModel,
    table: &PolicyTable,
    p: &[f64],
    r: &[f64],
    updates: &[Vec<f64>],
) -> Result<AggregateMoments> {
    let n = model.num_clients();
    if p.len() != n || r.len() != n || updates.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: updates.len() });
    }
    let dim = updates.first().map_or(0, Vec::len);
    let v_bar: Vec<f64> = (0..dim)
        .map(|j| (0..n).map(|k| p[k] * updates[k][j]).sum())
        .collect();
    let mut mean = vec![0.0; dim];
    let mut msd = 0.0;
    for o in model.dist.outcomes() {
        for &(set, f) in table.lookup(&o.key())? {
            let w = o.prob * f;
            if w == 0.0 {
                continue;
            }
            let contributions: Vec<ClientUpdate> = ids_of_mask(set)
                .into_iter()
                .map(|c| ClientUpdate::new(c, updates[c.0].clone()))
                .collect();
            let delta = aggregate_debias_with(&contributions, p, r, 0.0, dim)?.delta;
            for j in 0..dim {
                mean[j] += w * delta[j];
            }
            msd += w * delta.iter().zip(&v_bar).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok(AggregateMoments {
        mean,
        full_participation: v_bar,
        mean_sq_deviation: msd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::availability::{independent_distribution, two_client_example, CapacitySchedule};
    use crate::selection::CorrelationMode;

    fn fixture() -> RateRegionModel {
        RateRegionModel::new(two_client_example())
    }

    fn key(a: u64) -> ConfigKey {
        ConfigKey { available: a, capacity: 1 }
    }

    /// Select client 1 whenever available, else client 2.
    fn policy_b() -> PolicyTable {
        PolicyTable::deterministic([key(0b11), key(0b01), key(0b10), key(0b00)], |k| {
            if k.available & 1 != 0 {
                0b01
            } else {
                k.available & 0b10
            }
        })
        .unwrap()
    }

    fn naive_policy() -> PolicyTable {
        let mut t = PolicyTable::new();
        t.insert(key(0b11), vec![(0b01, 0.5), (0b10, 0.5)]).unwrap();
        t.insert(key(0b01), vec![(0b01, 1.0)]).unwrap();
        t.insert(key(0b10), vec![(0b10, 1.0)]).unwrap();
        t.insert(key(0b00), vec![(0, 1.0)]).unwrap();
        t
    }

    #[test]
    fn distribution_validation() {
        let bad = vec![ConfigurationOutcome { available: 1, capacity: 1, prob: 0.5 }];
        assert!(ConfigurationDistribution::new(1, bad).is_err());
        let dup = vec![
            ConfigurationOutcome { available: 1, capacity: 1, prob: 0.5 },
            ConfigurationOutcome { available: 1, capacity: 1, prob: 0.5 },
        ];
        assert!(ConfigurationDistribution::new(1, dup).is_err());
    }

    #[test]
    fn feasible_sets_include_empty() {
        let m = fixture();
        assert_eq!(m.feasible_sets(0), vec![0, 0b01, 0b10]);
        assert_eq!(m.feasible_sets(3), vec![0]);
    }

    #[test]
    fn policy_rates_from_the_example() {
        let m = fixture();
        let r = rate_of_policy(&m, &naive_policy()).unwrap();
        assert!((r[0] - 0.225).abs() < 1e-12 && (r[1] - 0.65).abs() < 1e-12, "{r:?}");
        let r = rate_of_policy(&m, &policy_b()).unwrap();
        assert!((r[0] - 0.375).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12, "{r:?}");
        let empty = PolicyTable::deterministic(m.distribution().outcomes().iter().map(|o| o.key()), |_| 0).unwrap();
        assert_eq!(rate_of_policy(&m, &empty).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn uncovered_outcome_is_reported() {
        let m = fixture();
        let partial = PolicyTable::deterministic([key(0b11)], |_| 0b01).unwrap();
        assert!(matches!(rate_of_policy(&m, &partial), Err(Error::PolicyIncomplete(_))));
        assert!(matches!(selection_covariance(&m, &partial), Err(Error::PolicyIncomplete(_))));
    }

    #[test]
    fn oracle_vertices() {
        let m = fixture();
        assert_eq!(linear_max_oracle(&m, &[-1.0, -2.0]), vec![0.0, 0.0]);
        let r = linear_max_oracle(&m, &[1.0, 0.0]);
        assert!((r[0] - 0.375).abs() < 1e-12 && r[1] == 0.0);
    }

    #[test]
    fn optimal_rate_two_client() {
        let obj = HObjective::new(vec![0.5, 0.5], CorrelationMode::Uncorrelated).unwrap();
        let out = optimal_rate(&fixture(), &obj, 1e-4).unwrap();
        assert!(out.converged);
        assert!((out.rates[0] - 0.375).abs() < 1e-3, "{:?}", out.rates);
        assert!((out.rates[1] - 0.5).abs() < 1e-3, "{:?}", out.rates);
    }

    #[test]
    fn optimal_rate_full_participation() {
        let dist = independent_distribution(&[1.0; 3], &CapacitySchedule::Constant(3)).unwrap();
        let obj = HObjective::new(vec![0.2, 0.3, 0.5], CorrelationMode::Uncorrelated).unwrap();
        let out = optimal_rate(&RateRegionModel::new(dist), &obj, 1e-10).unwrap();
        for v in out.rates {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn optimal_rate_single_client() {
        let dist = independent_distribution(&[0.3], &CapacitySchedule::Constant(1)).unwrap();
        let obj = HObjective::new(vec![1.0], CorrelationMode::Uncorrelated).unwrap();
        let out = optimal_rate(&RateRegionModel::new(dist), &obj, 1e-10).unwrap();
        assert!((out.rates[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn optimal_rate_excludes_unreachable_clients() {
        let dist = independent_distribution(&[0.5, 0.0], &CapacitySchedule::Constant(1)).unwrap();
        let obj = HObjective::new(vec![0.5, 0.5], CorrelationMode::Uncorrelated).unwrap();
        let out = optimal_rate(&RateRegionModel::new(dist), &obj, 1e-9).unwrap();
        assert_eq!(out.excluded, vec![ClientId(1)]);
        assert!((out.rates[0] - 0.5).abs() < 1e-9);
        assert_eq!(out.rates[1], 0.0);
    }

    #[test]
    fn optimal_policy_achieves_optimal_rate() {
        let obj = HObjective::new(vec![0.5, 0.5], CorrelationMode::Uncorrelated).unwrap();
        let m = fixture();
        let (table, opt) = optimal_policy(&m, &obj, 1e-8).unwrap();
        let r = rate_of_policy(&m, &table).unwrap();
        for k in 0..2 {
            assert!((r[k] - opt.rates[k]).abs() < 1e-9, "{r:?} vs {:?}", opt.rates);
        }
        let dist = independent_distribution(&[0.9, 0.5, 0.2], &CapacitySchedule::Constant(1)).unwrap();
        let m = RateRegionModel::new(dist);
        let obj = HObjective::new(vec![0.5, 0.3, 0.2], CorrelationMode::Uncorrelated).unwrap();
        let (table, opt) = optimal_policy(&m, &obj, 1e-9).unwrap();
        let r = rate_of_policy(&m, &table).unwrap();
        for k in 0..3 {
            assert!((r[k] - opt.rates[k]).abs() < 1e-8, "{r:?} vs {:?}", opt.rates);
        }
    }

    #[test]
    fn membership_examples() {
        let m = fixture();
        assert!(membership(&m, &[0.375, 0.5], 1e-6).unwrap().inside);
        assert!(membership(&m, &[0.375, 0.0], 1e-6).unwrap().inside);
        assert!(membership(&m, &[0.0, 0.0], 1e-6).unwrap().inside);
        assert!(membership(&m, &[0.1, 0.3], 1e-6).unwrap().inside);
        let out = membership(&m, &[0.5, 0.5], 1e-6).unwrap();
        assert!(!out.inside);
        let h = out.separating.unwrap();
        // the binding face is r_1 <= 0.375
        assert!((h[0] - 1.0).abs() < 1e-6 && h[1].abs() < 1e-6, "{h:?}");
        assert!((out.distance_lower - 0.125).abs() < 1e-6);
    }

    #[test]
    fn covariance_of_capacity_one_policy() {
        let m = fixture();
        let cov = selection_covariance(&m, &policy_b()).unwrap();
        let r = &cov.rates;
        for (k, rk) in r.iter().enumerate() {
            assert!((cov.sigma[k][k] - rk * (1.0 - rk)).abs() < 1e-12);
        }
        assert!((cov.sigma[0][1] + r[0] * r[1]).abs() < 1e-12);
        assert_eq!(cov.sigma[0][1], cov.sigma[1][0]);
    }

    #[test]
    fn covariance_vanishes_for_deterministic_full_selection() {
        let dist = independent_distribution(&[1.0; 3], &CapacitySchedule::Constant(3)).unwrap();
        let m = RateRegionModel::new(dist);
        let t = greedy_policy_table(&m, &[1.0, 1.0, 1.0]).unwrap();
        let cov = selection_covariance(&m, &t).unwrap();
        assert!(cov.sigma.iter().flatten().all(|v| v.abs() < 1e-15));
        let y = vec![vec![1.0, 2.0]; 3];
        assert_eq!(sampling_variance_exact(&y, &cov).unwrap(), 0.0);
    }

    #[test]
    fn variance_bound_arithmetic() {
        let b = variance_bounds(&[0.5, 0.5], &[0.375, 0.5], 1, 1.0).unwrap();
        assert!((b.general - 16.0 / 3.0).abs() < 1e-12);
        assert!((b.uncorrelated - 20.0 / 3.0).abs() < 1e-12);
        let b = variance_bounds(&[0.2, 0.8], &[1.0, 1.0], 3, 2.0).unwrap();
        assert!(b.general.abs() < 1e-12);
        assert!(matches!(variance_bounds(&[1.0], &[0.0], 1, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn variance_dimension_mismatch() {
        let cov = SelectionCovariance { rates: vec![0.5; 2], sigma: vec![vec![0.0; 2]; 2] };
        assert!(matches!(
            sampling_variance_exact(&[vec![1.0]], &cov),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn unbiased_by_enumeration_on_fixture() {
        let m = fixture();
        let updates = vec![vec![1.0, -2.0, 0.5], vec![-0.3, 0.7, 4.0]];
        let p = [0.5, 0.5];
        let r = [0.375, 0.5];
        let mom = aggregate_moments(&m, &policy_b(), &p, &r, &updates).unwrap();
        for (a, b) in mom.mean.iter().zip(&mom.full_participation) {
            assert!((a - b).abs() < 1e-12);
        }
        let cov = selection_covariance(&m, &policy_b()).unwrap();
        let y = importance_rows(&p, &r, &updates).unwrap();
        let tr = sampling_variance_exact(&y, &cov).unwrap();
        assert!((tr - mom.mean_sq_deviation).abs() < 1e-10);
    }
}
