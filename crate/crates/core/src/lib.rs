//! Client selection under intermittent availability for federated
//! learning: F3AST and baseline policies, availability processes, a
//! rate-region oracle for small enumerable systems, a convex FedOpt engine
//! and an experiment harness.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod availability;
pub mod data_models;
pub mod error;
pub mod fedtrain;
pub mod harness;
pub mod rate_region;
pub mod rng;
pub mod selection;

pub use availability::{
    AvailabilityKind, AvailabilityModel, AvailabilityParams, CapacitySchedule, ClientId, ConfigurationProcess,
    ConfigurationSample,
};
pub use data_models::{ClientDataset, FederatedDataset, GlmModel, ModelKind};
pub use error::{Error, Result};
pub use fedtrain::{AggregateUpdate, ClientUpdate, LearningRateSchedule, ModelParams, RoundRecord, ServerOptimizer};
pub use rate_region::{ConfigurationDistribution, RateRegionModel, SelectionCovariance};
pub use rng::{SeedStreams, Stream};
pub use selection::{CorrelationMode, HObjective, ParticipationRate, PolicyTable, SelectionResult};
