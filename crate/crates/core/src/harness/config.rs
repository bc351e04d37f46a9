//! JSON experiment configuration with strict validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::availability::{AvailabilityKind, AvailabilityParams, CapacitySchedule};
use crate::data_models::{DatasetSpec, DEFAULT_L2, DEFAULT_VALIDATION_FRACTION};
use crate::error::{Error, Result};
use crate::fedtrain::{AdamConfig, LearningRateSchedule, TrainingConfig};
use crate::selection::{CorrelationMode, DEFAULT_BETA, DEFAULT_R_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    F3ast,
    Fedavg,
    Poc,
    Fixed,
}

impl PolicyName {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::F3ast => "f3ast",
            PolicyName::Fedavg => "fedavg",
            PolicyName::Poc => "poc",
            PolicyName::Fixed => "fixed",
        }
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f3ast" => Ok(PolicyName::F3ast),
            "fedavg" => Ok(PolicyName::Fedavg),
            "poc" => Ok(PolicyName::Poc),
            "fixed" => Ok(PolicyName::Fixed),
            other => Err(Error::Config(vec![format!(
                "unknown policy '{other}' (expected f3ast, fedavg, poc or fixed)"
            )])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_true")]
    pub intercept: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            l2: DEFAULT_L2,
            intercept: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PocConfig {
    /// Candidates per round; defaults to `2m`.
    #[serde(default)]
    pub d: Option<usize>,
    /// Clients trained per round; defaults to the capacity.
    #[serde(default)]
    pub m: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerOptimizerConfig {
    #[default]
    Sgd,
    Adam(AdamConfig),
}

fn default_l2() -> f64 {
    DEFAULT_L2
}
fn default_true() -> bool {
    true
}
fn default_validation_fraction() -> f64 {
    DEFAULT_VALIDATION_FRACTION
}
fn default_policies() -> Vec<PolicyName> {
    vec![PolicyName::F3ast, PolicyName::Fedavg]
}
fn default_local_steps() -> usize {
    10
}
fn default_batch_size() -> usize {
    20
}
fn default_schedule() -> LearningRateSchedule {
    LearningRateSchedule::Constant { eta: 0.01 }
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_r_min() -> f64 {
    DEFAULT_R_MIN
}
fn default_rounds() -> usize {
    500
}
fn default_eval_every() -> usize {
    10
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_window() -> usize {
    100
}

/// Everything one `run` needs. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    pub availability: AvailabilityParams,
    #[serde(default)]
    pub capacity: CapacitySchedule,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyName>,
    #[serde(default)]
    pub poc: PocConfig,
    #[serde(default)]
    pub server_optimizer: ServerOptimizerConfig,
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_schedule")]
    pub schedule: LearningRateSchedule,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_r_min")]
    pub r_min: f64,
    /// Initial participation rate for every client; `None` means `1/N`.
    #[serde(default)]
    pub r_init: Option<f64>,
    #[serde(default)]
    pub correlation: CorrelationMode,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Write `r(t)` to the CSV every this many rounds; 0 disables.
    #[serde(default)]
    pub rates_every: usize,
    /// Evaluated rounds averaged in the summary.
    #[serde(default = "default_window")]
    pub summary_window: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// A config with every default and the given dataset and availability.
    pub fn new(dataset: DatasetSpec, availability: AvailabilityParams) -> Self {
        Self {
            dataset,
            model: ModelConfig::default(),
            validation_fraction: default_validation_fraction(),
            availability,
            capacity: CapacitySchedule::default(),
            policies: default_policies(),
            poc: PocConfig::default(),
            server_optimizer: ServerOptimizerConfig::default(),
            local_steps: default_local_steps(),
            batch_size: default_batch_size(),
            schedule: default_schedule(),
            beta: default_beta(),
            r_min: default_r_min(),
            r_init: None,
            correlation: CorrelationMode::default(),
            rounds: default_rounds(),
            eval_every: default_eval_every(),
            rates_every: 0,
            summary_window: default_window(),
            seeds: default_seeds(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = parse_json(text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Collects every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        self.dataset.validate(&mut errors);
        self.availability.validate(&mut errors);
        self.capacity.validate(&mut errors);
        self.schedule.validate(&mut errors);
        if !(self.model.l2 >= 0.0 && self.model.l2.is_finite()) {
            errors.push(format!("model.l2 must be non-negative, got {}", self.model.l2));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            errors.push(format!("validation_fraction must be in [0,1), got {}", self.validation_fraction));
        }
        if self.policies.is_empty() {
            errors.push("policies must list at least one policy".into());
        }
        let mut sorted = self.policies.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.policies.len() {
            errors.push("policies must not repeat".into());
        }
        if let (Some(d), Some(m)) = (self.poc.d, self.poc.m) {
            if d < m {
                errors.push(format!("poc.d ({d}) must be at least poc.m ({m})"));
            }
        }
        if let ServerOptimizerConfig::Adam(params) = &self.server_optimizer {
            if !(params.lr > 0.0) || !(0.0..1.0).contains(&params.beta1) || !(0.0..1.0).contains(&params.beta2) || !(params.eps > 0.0) {
                errors.push("server_optimizer adam needs lr > 0, beta1 and beta2 in [0,1), eps > 0".into());
            }
        }
        if self.batch_size == 0 {
            errors.push("batch_size must be at least 1".into());
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            errors.push(format!("beta must be in (0,1), got {}", self.beta));
        }
        if !(self.r_min > 0.0 && self.r_min <= 1.0) {
            errors.push(format!("r_min must be in (0,1], got {}", self.r_min));
        }
        if let Some(r0) = self.r_init {
            if !(r0 >= self.r_min && r0 <= 1.0) {
                errors.push(format!("r_init must be in [r_min, 1], got {r0}"));
            }
        }
        if self.summary_window == 0 {
            errors.push("summary_window must be at least 1".into());
        }
        if self.seeds.is_empty() {
            errors.push("seeds must list at least one seed".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            errors.push("seeds must not repeat".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            local_steps: self.local_steps,
            batch_size: self.batch_size,
            schedule: self.schedule,
            eval_every: self.eval_every,
            rates_every: self.rates_every,
        }
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub policy: Option<PolicyName>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(p) = self.policy {
            cfg.policies = vec![p];
        }
    }
}

/// Which system the selection-only loop runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// Two clients with marginals 0.375 and 0.8 and capacity 1.
    TwoClient,
    /// Independent availability on a small number of clients.
    Independent {
        num_clients: usize,
        availability: AvailabilityParams,
        #[serde(default)]
        capacity: CapacitySchedule,
    },
}

fn default_rate_rounds() -> usize {
    50_000
}
fn default_tolerance() -> f64 {
    0.02
}

/// Config for the rate-convergence check and the oracle report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    pub system: SystemSpec,
    /// Client weights; uniform when omitted.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub correlation: CorrelationMode,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_r_min")]
    pub r_min: f64,
    #[serde(default = "default_rate_rounds")]
    pub rounds: usize,
    /// Rounds dropped before averaging; `None` means `10 / beta`.
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RatesConfig {
    pub fn new(system: SystemSpec) -> Self {
        Self {
            system,
            weights: None,
            correlation: CorrelationMode::default(),
            beta: default_beta(),
            r_min: default_r_min(),
            rounds: default_rate_rounds(),
            burn_in: None,
            tolerance: default_tolerance(),
            seed: 0,
            output_dir: default_output_dir(),
        }
    }

    pub fn two_client() -> Self {
        let mut cfg = Self::new(SystemSpec::TwoClient);
        cfg.weights = Some(vec![0.5, 0.5]);
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RatesConfig = parse_json(&text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_clients(&self) -> usize {
        match &self.system {
            SystemSpec::TwoClient => 2,
            SystemSpec::Independent { num_clients, .. } => *num_clients,
        }
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or((10.0 / self.beta).round() as usize)
    }

    pub fn weights(&self) -> Vec<f64> {
        let n = self.num_clients();
        self.weights.clone().unwrap_or_else(|| vec![1.0 / n.max(1) as f64; n])
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if let SystemSpec::Independent {
            num_clients,
            availability,
            capacity,
        } = &self.system
        {
            if *num_clients == 0 {
                errors.push("system.num_clients must be at least 1".into());
            }
            availability.validate(&mut errors);
            capacity.validate(&mut errors);
            if availability.kind == AvailabilityKind::Smartphones {
                errors.push("system.availability: smartphones is time-modulated and has no enumerable stationary law".into());
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != self.num_clients() {
                errors.push(format!("weights has {} entries for {} clients", w.len(), self.num_clients()));
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                errors.push("weights must be non-negative and sum to 1".into());
            }
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            errors.push(format!("beta must be in (0,1), got {}", self.beta));
        }
        if !(self.r_min > 0.0 && self.r_min <= 1.0) {
            errors.push(format!("r_min must be in (0,1], got {}", self.r_min));
        }
        if !(self.tolerance > 0.0) {
            errors.push("tolerance must be positive".into());
        }
        if self.burn_in() >= self.rounds {
            errors.push(format!("burn_in ({}) must be below rounds ({})", self.burn_in(), self.rounds));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        if e.is_syntax() || e.is_eof() {
            Error::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            }
        } else {
            Error::Config(vec![e.to_string()])
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dataset": {"kind": "synthetic_alpha", "alpha": 1.0, "beta": 1.0},
        "availability": {"kind": "smartphones"}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(MINIMAL, Path::new("x.json")).unwrap();
        assert_eq!(cfg.capacity, CapacitySchedule::Constant(10));
        assert_eq!(cfg.batch_size, 20);
        assert_eq!(cfg.beta, 0.001);
        assert_eq!(cfg.eval_every, 10);
        assert_eq!(cfg.seeds.len(), 3);
        assert_eq!(cfg.policies, vec![PolicyName::F3ast, PolicyName::Fedavg]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("\"availability\"", "\"bogus\": 1, \"availability\"");
        assert!(matches!(ExperimentConfig::from_json(&text, Path::new("x")), Err(Error::Config(_))));
    }

    #[test]
    fn every_violation_is_listed() {
        let text = MINIMAL.replace("\"availability\"", "\"beta\": 2.0, \"batch_size\": 0, \"seeds\": [], \"availability\"");
        match ExperimentConfig::from_json(&text, Path::new("x")) {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 3, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_line() {
        match ExperimentConfig::from_json("{\n\n  \"dataset\": ,", Path::new("bad.json")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn adam_section() {
        let text = MINIMAL.replace("\"availability\"", "\"server_optimizer\": {\"kind\": \"adam\", \"lr\": 0.05}, \"availability\"");
        let cfg = ExperimentConfig::from_json(&text, Path::new("x")).unwrap();
        match cfg.server_optimizer {
            ServerOptimizerConfig::Adam(a) => assert_eq!((a.lr, a.beta1), (0.05, 0.9)),
            other => panic!("{other:?}"),
        }
        let bad = text.replace("\"lr\"", "\"learning_rate\"");
        assert!(ExperimentConfig::from_json(&bad, Path::new("x")).is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL, Path::new("x")).unwrap();
        Overrides {
            seed: Some(7),
            output_dir: Some("o".into()),
            policy: Some("poc".parse().unwrap()),
        }
        .apply(&mut cfg);
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.policies, vec![PolicyName::Poc]);
        assert!("nope".parse::<PolicyName>().is_err());
    }

    #[test]
    fn rates_config_burn_in() {
        let cfg = RatesConfig::two_client();
        assert_eq!(cfg.burn_in(), 10_000);
        cfg.validate().unwrap();
        let mut bad = cfg.clone();
        bad.rounds = 100;
        assert!(bad.validate().is_err());
    }
}
