//! Fixtures shared by the benchmarks.

use f3ast_core::availability::{independent_distribution, CapacitySchedule, ClientId, ConfigurationSample};
use f3ast_core::{CorrelationMode, HObjective, ParticipationRate, RateRegionModel};

/// Uniform-weight objective and a rate vector with spread-out entries.
pub fn objective_and_rate(n: usize) -> (HObjective, ParticipationRate) {
    let obj = HObjective::new(vec![1.0 / n as f64; n], CorrelationMode::Uncorrelated).expect("valid weights");
    let r = (0..n).map(|k| 0.05 + 0.9 * (k as f64 / n as f64)).collect();
    let rate = ParticipationRate::with_initial(r, 0.001, 1e-4).expect("valid rates");
    (obj, rate)
}

/// Every other client available.
pub fn half_available(n: usize, capacity: usize) -> ConfigurationSample {
    ConfigurationSample::new(0, (0..n).step_by(2).map(ClientId).collect(), capacity)
}

/// Independent availability with probability `q` on `n` enumerable clients.
pub fn independent_region(n: usize, q: f64, capacity: usize) -> RateRegionModel {
    let dist = independent_distribution(&vec![q; n], &CapacitySchedule::Constant(capacity)).expect("enumerable");
    RateRegionModel::new(dist)
}
