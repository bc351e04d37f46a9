//! Synthetic federated datasets and convex client models (least squares
//! and multinomial logistic regression).

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

pub const DEFAULT_L2: f64 = 1e-4;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;

/// Row-major sample block. Classification targets hold the class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub dim: usize,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Samples {
    pub fn new(dim: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if dim == 0 || features.len() != dim * targets.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * targets.len(),
                got: features.len(),
            });
        }
        Ok(Self { dim, features, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn select(&self, range: std::ops::Range<usize>) -> Samples {
        Samples {
            dim: self.dim,
            features: self.features[range.start * self.dim..range.end * self.dim].to_vec(),
            targets: self.targets[range].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub train: Samples,
    pub validation: Samples,
}

impl ClientDataset {
    /// Splits off the trailing `floor(fraction * n)` samples (at least one)
    /// for validation.
    pub fn split(samples: Samples, validation_fraction: f64) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::invalid(format!("client needs at least 2 samples, has {n}")));
        }
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(Error::invalid(format!("validation fraction {validation_fraction} outside [0, 1)")));
        }
        let n_val = ((validation_fraction * n as f64).floor() as usize).clamp(1, n - 1);
        Ok(Self {
            train: samples.select(0..n - n_val),
            validation: samples.select(n - n_val..n),
        })
    }

    pub fn num_samples(&self) -> usize {
        self.train.len() + self.validation.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification { num_classes: usize },
}

/// How a dataset was produced; stored alongside dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian features with `round(x . beta)` targets, split evenly.
    SyntheticIid {
        #[serde(default = "default_iid_task")]
        task: IidTask,
        #[serde(default = "default_iid_clients")]
        num_clients: usize,
        #[serde(default = "default_iid_per_client")]
        samples_per_client: usize,
        #[serde(default = "default_iid_dim")]
        dim: usize,
        #[serde(default = "default_classes")]
        num_classes: usize,
    },
    /// Heterogeneous softmax data with per-client model and feature shifts.
    SyntheticAlpha {
        alpha: f64,
        beta: f64,
        #[serde(default = "default_alpha_clients")]
        num_clients: usize,
        #[serde(default)]
        sizes: ClientSizes,
        #[serde(default = "default_alpha_dim")]
        dim: usize,
        #[serde(default = "default_classes")]
        num_classes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IidTask {
    /// Real-valued targets for least squares.
    Regression,
    /// Targets binned into equal-frequency classes for softmax.
    Classification,
}

fn default_iid_task() -> IidTask {
    IidTask::Classification
}
fn default_iid_clients() -> usize {
    100
}
fn default_iid_per_client() -> usize {
    100
}
fn default_iid_dim() -> usize {
    100
}
fn default_classes() -> usize {
    10
}
fn default_alpha_clients() -> usize {
    100
}
fn default_alpha_dim() -> usize {
    60
}

/// Per-client sample counts for the heterogeneous generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientSizes {
    Fixed { n: usize },
    /// `n_k = floor(LogNormal(mu, sigma)) + offset`
    LogNormal { mu: f64, sigma: f64, offset: usize },
}

impl Default for ClientSizes {
    fn default() -> Self {
        ClientSizes::LogNormal {
            mu: 4.0,
            sigma: 2.0,
            offset: 50,
        }
    }
}

impl DatasetSpec {
    pub fn synthetic_iid(task: IidTask) -> Self {
        DatasetSpec::SyntheticIid {
            task,
            num_clients: default_iid_clients(),
            samples_per_client: default_iid_per_client(),
            dim: default_iid_dim(),
            num_classes: default_classes(),
        }
    }

    pub fn synthetic_alpha(alpha: f64, beta: f64) -> Self {
        DatasetSpec::SyntheticAlpha {
            alpha,
            beta,
            num_clients: default_alpha_clients(),
            sizes: ClientSizes::default(),
            dim: default_alpha_dim(),
            num_classes: default_classes(),
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        match self {
            DatasetSpec::SyntheticIid {
                task,
                num_clients,
                samples_per_client,
                dim,
                num_classes,
            } => {
                if *num_clients == 0 {
                    errors.push("dataset.num_clients must be at least 1".into());
                }
                if *samples_per_client < 2 {
                    errors.push("dataset.samples_per_client must be at least 2".into());
                }
                if *dim == 0 {
                    errors.push("dataset.dim must be at least 1".into());
                }
                if *task == IidTask::Classification && *num_classes < 2 {
                    errors.push("dataset.num_classes must be at least 2".into());
                }
            }
            DatasetSpec::SyntheticAlpha {
                alpha,
                beta,
                num_clients,
                sizes,
                dim,
                num_classes,
            } => {
                if !(*alpha >= 0.0 && alpha.is_finite()) || !(*beta >= 0.0 && beta.is_finite()) {
                    errors.push("dataset.alpha and dataset.beta must be finite and non-negative".into());
                }
                if *num_clients == 0 {
                    errors.push("dataset.num_clients must be at least 1".into());
                }
                if *dim == 0 {
                    errors.push("dataset.dim must be at least 1".into());
                }
                if *num_classes < 2 {
                    errors.push("dataset.num_classes must be at least 2".into());
                }
                match sizes {
                    ClientSizes::Fixed { n } if *n < 2 => {
                        errors.push("dataset.sizes.n must be at least 2".into());
                    }
                    ClientSizes::LogNormal { mu, sigma, offset } => {
                        if !mu.is_finite() || !(*sigma >= 0.0 && sigma.is_finite()) {
                            errors.push("dataset.sizes needs finite mu and non-negative sigma".into());
                        }
                        if *offset < 2 {
                            errors.push("dataset.sizes.offset must be at least 2".into());
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    pub fn generate(&self, validation_fraction: f64, rng: &mut StreamRng) -> Result<FederatedDataset> {
        let mut errors = Vec::new();
        self.validate(&mut errors);
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        match *self {
            DatasetSpec::SyntheticIid {
                task,
                num_clients,
                samples_per_client,
                dim,
                num_classes,
            } => synthetic_iid_with(self.clone(), task, num_clients, samples_per_client, dim, num_classes, validation_fraction, rng),
            DatasetSpec::SyntheticAlpha {
                alpha,
                beta,
                num_clients,
                sizes,
                dim,
                num_classes,
            } => synthetic_alpha_with(self.clone(), alpha, beta, num_clients, sizes, dim, num_classes, validation_fraction, rng),
        }
    }
}

/// Clients plus the aggregation weights `p_k = n_k / sum_j n_j` computed
/// over training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedDataset {
    pub spec: Option<DatasetSpec>,
    pub task: Task,
    pub dim: usize,
    pub clients: Vec<ClientDataset>,
    p: Vec<f64>,
}

impl FederatedDataset {
    pub fn new(task: Task, clients: Vec<ClientDataset>) -> Result<Self> {
        let dim = clients
            .first()
            .map(|c| c.train.dim)
            .ok_or_else(|| Error::invalid("dataset has no clients"))?;
        for (k, c) in clients.iter().enumerate() {
            if c.train.dim != dim || c.validation.dim != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.train.dim });
            }
            if c.train.is_empty() {
                return Err(Error::invalid(format!("client {k} has no training samples")));
            }
            if let Task::Classification { num_classes } = task {
                let bad = c
                    .train
                    .targets
                    .iter()
                    .chain(&c.validation.targets)
                    .any(|&y| y < 0.0 || y.fract() != 0.0 || y as usize >= num_classes);
                if bad {
                    return Err(Error::invalid(format!("client {k} has labels outside [0, {num_classes})")));
                }
            }
        }
        let total: usize = clients.iter().map(|c| c.train.len()).sum();
        let p = clients.iter().map(|c| c.train.len() as f64 / total as f64).collect();
        Ok(Self {
            spec: None,
            task,
            dim,
            clients,
            p,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.p
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.task {
            Task::Classification { num_classes } => Some(num_classes),
            Task::Regression => None,
        }
    }

    /// All training samples pooled in client order.
    pub fn pooled_train(&self) -> Samples {
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for c in &self.clients {
            features.extend_from_slice(&c.train.features);
            targets.extend_from_slice(&c.train.targets);
        }
        Samples {
            dim: self.dim,
            features,
            targets,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: FederatedDataset = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        // re-run validation and recompute the weights
        let spec = ds.spec.clone();
        let mut checked = FederatedDataset::new(ds.task, ds.clients)?;
        checked.spec = spec;
        Ok(checked)
    }
}

fn gaussian_vec(n: usize, rng: &mut StreamRng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// 100 clients with 100 standard-normal samples each in `R^100`; targets
/// `round(x . beta)` with `beta ~ N(0, I)`.
pub fn generate_synthetic_iid(task: IidTask, rng: &mut StreamRng) -> Result<FederatedDataset> {
    DatasetSpec::synthetic_iid(task).generate(DEFAULT_VALIDATION_FRACTION, rng)
}

/// Heterogeneous softmax data: client `k` draws `u_k ~ N(0, alpha^2)`,
/// `W_k, b_k ~ N(u_k, 1)`, a feature mean `v_k ~ N(B_k, 1)` with
/// `B_k ~ N(0, beta^2)`, features `x ~ N(v_k, diag(j^-1.2))` and labels
/// `argmax(W_k x + b_k)`.
pub fn generate_synthetic_alpha(
    alpha: f64,
    beta: f64,
    num_clients: usize,
    sizes: ClientSizes,
    dim: usize,
    num_classes: usize,
    rng: &mut StreamRng,
) -> Result<FederatedDataset> {
    DatasetSpec::SyntheticAlpha {
        alpha,
        beta,
        num_clients,
        sizes,
        dim,
        num_classes,
    }
    .generate(DEFAULT_VALIDATION_FRACTION, rng)
}

#[allow(clippy::too_many_arguments)]
fn synthetic_iid_with(
    spec: DatasetSpec,
    task: IidTask,
    num_clients: usize,
    per_client: usize,
    dim: usize,
    num_classes: usize,
    validation_fraction: f64,
    rng: &mut StreamRng,
) -> Result<FederatedDataset> {
    let n = num_clients * per_client;
    let beta = gaussian_vec(dim, rng);
    let features = gaussian_vec(n * dim, rng);
    let raw: Vec<f64> = features
        .chunks_exact(dim)
        .map(|x| x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>().round())
        .collect();
    let (targets, out_task) = match task {
        IidTask::Regression => (raw, Task::Regression),
        IidTask::Classification => {
            let mut sorted = raw.clone();
            sorted.sort_by(f64::total_cmp);
            let cuts: Vec<f64> = (1..num_classes).map(|j| sorted[j * n / num_classes]).collect();
            let labels = raw.iter().map(|&y| cuts.partition_point(|&c| c <= y) as f64).collect();
            (labels, Task::Classification { num_classes })
        }
    };
    let samples = Samples::new(dim, features, targets)?;
    let clients = (0..num_clients)
        .map(|k| ClientDataset::split(samples.select(k * per_client..(k + 1) * per_client), validation_fraction))
        .collect::<Result<Vec<_>>>()?;
    let mut ds = FederatedDataset::new(out_task, clients)?;
    ds.spec = Some(spec);
    Ok(ds)
}

#[allow(clippy::too_many_arguments)]
fn synthetic_alpha_with(
    spec: DatasetSpec,
    alpha: f64,
    beta: f64,
    num_clients: usize,
    sizes: ClientSizes,
    dim: usize,
    num_classes: usize,
    validation_fraction: f64,
    rng: &mut StreamRng,
) -> Result<FederatedDataset> {
    let counts: Vec<usize> = match sizes {
        ClientSizes::Fixed { n } => vec![n; num_clients],
        ClientSizes::LogNormal { mu, sigma, offset } => {
            let dist = LogNormal::new(mu, sigma).map_err(|e| Error::invalid(e.to_string()))?;
            (0..num_clients).map(|_| dist.sample(rng).floor() as usize + offset).collect()
        }
    };
    let feature_std: Vec<f64> = (1..=dim).map(|j| (j as f64).powf(-1.2).sqrt()).collect();
    let mut clients = Vec::with_capacity(num_clients);
    for &n_k in &counts {
        let u = alpha * rng.sample::<f64, _>(StandardNormal);
        let b_shift = beta * rng.sample::<f64, _>(StandardNormal);
        let around = |c: f64, len: usize, rng: &mut StreamRng| -> Vec<f64> {
            (0..len).map(|_| c + rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let w = around(u, num_classes * dim, rng);
        let b = around(u, num_classes, rng);
        let v = around(b_shift, dim, rng);
        let mut features = Vec::with_capacity(n_k * dim);
        let mut targets = Vec::with_capacity(n_k);
        for _ in 0..n_k {
            let x: Vec<f64> = (0..dim)
                .map(|j| v[j] + feature_std[j] * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let label = (0..num_classes)
                .map(|c| b[c] + w[c * dim..(c + 1) * dim].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>())
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, z)| if z > best.1 { (c, z) } else { best })
                .0;
            features.extend_from_slice(&x);
            targets.push(label as f64);
        }
        clients.push(ClientDataset::split(Samples::new(dim, features, targets)?, validation_fraction)?);
    }
    let mut ds = FederatedDataset::new(Task::Classification { num_classes }, clients)?;
    ds.spec = Some(spec);
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LeastSquares,
    Softmax,
}

/// Generalized linear client model. Parameters are a flat vector: for
/// softmax, `num_classes` rows of `dim` weights (plus one bias each when
/// `intercept` is set); for least squares, `dim` weights (plus a bias).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub kind: ModelKind,
    pub dim: usize,
    pub num_classes: usize,
    pub l2: f64,
    pub intercept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    PerSample,
    PerUser,
}

impl GlmModel {
    pub fn for_dataset(ds: &FederatedDataset, l2: f64, intercept: bool) -> Self {
        let (kind, num_classes) = match ds.task {
            Task::Regression => (ModelKind::LeastSquares, 1),
            Task::Classification { num_classes } => (ModelKind::Softmax, num_classes),
        };
        Self {
            kind,
            dim: ds.dim,
            num_classes,
            l2,
            intercept,
        }
    }

    fn row_len(&self) -> usize {
        self.dim + usize::from(self.intercept)
    }

    fn outputs(&self) -> usize {
        match self.kind {
            ModelKind::LeastSquares => 1,
            ModelKind::Softmax => self.num_classes,
        }
    }

    pub fn num_params(&self) -> usize {
        self.outputs() * self.row_len()
    }

    fn linear(&self, w: &[f64], x: &[f64], out: usize) -> f64 {
        let row = &w[out * self.row_len()..(out + 1) * self.row_len()];
        let z: f64 = row[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum();
        if self.intercept {
            z + row[self.dim]
        } else {
            z
        }
    }

    fn add_outer(&self, g: &mut [f64], x: &[f64], out: usize, coef: f64) {
        let len = self.row_len();
        let row = &mut g[out * len..(out + 1) * len];
        for (gi, xi) in row[..self.dim].iter_mut().zip(x) {
            *gi += coef * xi;
        }
        if self.intercept {
            row[self.dim] += coef;
        }
    }

    /// Data loss of one sample, its gradient accumulated into `g` with
    /// weight `scale`, and whether the prediction is correct.
    fn sample_terms(&self, w: &[f64], x: &[f64], y: f64, g: Option<(&mut [f64], f64)>, logits: &mut Vec<f64>) -> (f64, bool) {
        match self.kind {
            ModelKind::LeastSquares => {
                let r = self.linear(w, x, 0) - y;
                if let Some((g, scale)) = g {
                    self.add_outer(g, x, 0, scale * r);
                }
                (0.5 * r * r, r.abs() < 0.5)
            }
            ModelKind::Softmax => {
                logits.clear();
                logits.extend((0..self.num_classes).map(|c| self.linear(w, x, c)));
                let label = y as usize;
                let (argmax, zmax) = logits
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (c, &z)| if z > b.1 { (c, z) } else { b });
                let lse = zmax + logits.iter().map(|z| (z - zmax).exp()).sum::<f64>().ln();
                if let Some((g, scale)) = g {
                    for (c, z) in logits.iter().enumerate() {
                        let prob = (z - lse).exp();
                        let coef = prob - if c == label { 1.0 } else { 0.0 };
                        self.add_outer(g, x, c, scale * coef);
                    }
                }
                (lse - logits[label], argmax == label)
            }
        }
    }

    /// Mean loss over `indices` plus `l2/2 |w|^2`, with its gradient.
    pub fn loss_and_grad(&self, w: &[f64], data: &Samples, indices: &[usize]) -> (f64, Vec<f64>) {
        let mut g: Vec<f64> = w.iter().map(|v| self.l2 * v).collect();
        let mut loss = 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>();
        if indices.is_empty() {
            return (loss, g);
        }
        let scale = 1.0 / indices.len() as f64;
        let mut logits = Vec::with_capacity(self.num_classes);
        for &i in indices {
            let (l, _) = self.sample_terms(w, data.row(i), data.targets[i], Some((&mut g, scale)), &mut logits);
            loss += scale * l;
        }
        (loss, g)
    }

    /// Full-batch objective of one client.
    pub fn client_objective(&self, w: &[f64], data: &Samples) -> f64 {
        let idx: Vec<usize> = (0..data.len()).collect();
        self.loss_and_grad(w, data, &idx).0
    }

    /// `F(w) = sum_k p_k F_k(w)` over training splits.
    pub fn global_objective(&self, w: &[f64], ds: &FederatedDataset) -> f64 {
        ds.clients
            .iter()
            .zip(ds.weights())
            .map(|(c, p)| p * self.client_objective(w, &c.train))
            .sum()
    }

    fn totals(&self, w: &[f64], data: &Samples) -> (f64, usize) {
        let mut logits = Vec::with_capacity(self.num_classes);
        let mut loss = 0.0;
        let mut correct = 0;
        for i in 0..data.len() {
            let (l, ok) = self.sample_terms(w, data.row(i), data.targets[i], None, &mut logits);
            loss += l;
            correct += usize::from(ok);
        }
        (loss, correct)
    }

    /// Validation loss (without the regularizer) and accuracy. Least-squares
    /// accuracy counts predictions within 0.5 of the target.
    pub fn evaluate(&self, w: &[f64], ds: &FederatedDataset, mode: EvalMode) -> Metrics {
        match mode {
            EvalMode::PerSample => {
                let (mut loss, mut correct, mut n) = (0.0, 0, 0);
                for c in &ds.clients {
                    let (l, k) = self.totals(w, &c.validation);
                    loss += l;
                    correct += k;
                    n += c.validation.len();
                }
                let n = n.max(1) as f64;
                Metrics {
                    loss: loss / n,
                    accuracy: correct as f64 / n,
                }
            }
            EvalMode::PerUser => {
                let (mut loss, mut acc, mut users) = (0.0, 0.0, 0usize);
                for c in ds.clients.iter().filter(|c| !c.validation.is_empty()) {
                    let (l, k) = self.totals(w, &c.validation);
                    let n = c.validation.len() as f64;
                    loss += l / n;
                    acc += k as f64 / n;
                    users += 1;
                }
                let users = users.max(1) as f64;
                Metrics {
                    loss: loss / users,
                    accuracy: acc / users,
                }
            }
        }
    }
}

fn design_matrix(model: &GlmModel, data: &Samples) -> DMatrix<f64> {
    let cols = model.row_len();
    DMatrix::from_fn(data.len(), cols, |i, j| if j < model.dim { data.row(i)[j] } else { 1.0 })
}

/// Hessian `X^T X / n + l2 I` of a least-squares objective over `data`.
pub fn least_squares_hessian(model: &GlmModel, data: &Samples) -> Result<DMatrix<f64>> {
    if model.kind != ModelKind::LeastSquares {
        return Err(Error::invalid("hessian is only available for least squares"));
    }
    let x = design_matrix(model, data);
    let n = data.len().max(1) as f64;
    let mut h = x.transpose() * &x / n;
    for i in 0..h.nrows() {
        h[(i, i)] += model.l2;
    }
    Ok(h)
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn eigen_extremes(h: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(h.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Curvature constants of a least-squares federated objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Curvature {
    /// Strong convexity of the global objective.
    pub mu_global: f64,
    pub l_global: f64,
    /// Largest smoothness constant over the client objectives.
    pub l_client_max: f64,
}

pub fn least_squares_curvature(model: &GlmModel, ds: &FederatedDataset) -> Result<Curvature> {
    let (mu_global, l_global) = eigen_extremes(&global_hessian(model, ds)?);
    let mut l_client_max: f64 = 0.0;
    for c in &ds.clients {
        l_client_max = l_client_max.max(eigen_extremes(&least_squares_hessian(model, &c.train)?).1);
    }
    Ok(Curvature {
        mu_global,
        l_global,
        l_client_max,
    })
}

fn global_hessian(model: &GlmModel, ds: &FederatedDataset) -> Result<DMatrix<f64>> {
    let mut h = DMatrix::zeros(model.num_params(), model.num_params());
    for (c, p) in ds.clients.iter().zip(ds.weights()) {
        h += least_squares_hessian(model, &c.train)? * *p;
    }
    Ok(h)
}

/// Exact minimizer and minimum of the global least-squares objective.
pub fn ridge_optimum(model: &GlmModel, ds: &FederatedDataset) -> Result<(Vec<f64>, f64)> {
    let h = global_hessian(model, ds)?;
    let mut rhs = DVector::zeros(model.num_params());
    for (c, p) in ds.clients.iter().zip(ds.weights()) {
        let x = design_matrix(model, &c.train);
        let y = DVector::from_column_slice(&c.train.targets);
        rhs += x.transpose() * y * (*p / c.train.len() as f64);
    }
    let w = h
        .cholesky()
        .ok_or_else(|| Error::invalid("global hessian is not positive definite"))?
        .solve(&rhs);
    let w: Vec<f64> = w.iter().copied().collect();
    let f = model.global_objective(&w, ds);
    Ok((w, f))
}

/// Draws `size` indices uniformly without replacement (all of them when
/// `size >= n`), in sorted order.
pub fn sample_batch(n: usize, size: usize, rng: &mut StreamRng) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(rng, n, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Vector of `len` i.i.d. N(0, std²) draws.
pub fn normal_vec(n: usize, std: f64, rng: &mut StreamRng) -> Vec<f64> {
    let d = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| d.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedStreams, Stream};

    fn rng(seed: u64) -> StreamRng {
        SeedStreams::new(seed).stream(Stream::Data)
    }

    fn toy(kind: ModelKind, classes: usize, intercept: bool, l2: f64) -> (GlmModel, Samples) {
        let mut r = rng(5);
        let dim = 4;
        let n = 12;
        let features = normal_vec(n * dim, 1.0, &mut r);
        let targets = (0..n)
            .map(|i| match kind {
                ModelKind::LeastSquares => features[i * dim] * 2.0 - 1.0,
                ModelKind::Softmax => (i % classes) as f64,
            })
            .collect();
        let model = GlmModel {
            kind,
            dim,
            num_classes: classes,
            l2,
            intercept,
        };
        (model, Samples::new(dim, features, targets).unwrap())
    }

    fn fd_check(model: &GlmModel, data: &Samples) {
        let mut r = rng(9);
        let idx: Vec<usize> = (0..data.len()).collect();
        for _ in 0..10 {
            let w = normal_vec(model.num_params(), 0.5, &mut r);
            let (_, g) = model.loss_and_grad(&w, data, &idx);
            for j in 0..w.len() {
                let h = 1e-6;
                let mut a = w.clone();
                let mut b = w.clone();
                a[j] += h;
                b[j] -= h;
                let fd = (model.loss_and_grad(&a, data, &idx).0 - model.loss_and_grad(&b, data, &idx).0) / (2.0 * h);
                let err = (fd - g[j]).abs() / g[j].abs().max(1e-3);
                assert!(err <= 1e-6, "param {j}: fd {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for intercept in [false, true] {
            let (m, d) = toy(ModelKind::LeastSquares, 1, intercept, 0.01);
            fd_check(&m, &d);
            let (m, d) = toy(ModelKind::Softmax, 3, intercept, 0.01);
            fd_check(&m, &d);
        }
    }

    #[test]
    fn zero_softmax_loss_is_log_classes() {
        let (m, d) = toy(ModelKind::Softmax, 2, true, 0.0);
        let w = vec![0.0; m.num_params()];
        let (l, _) = m.loss_and_grad(&w, &d, &[0, 1]);
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn regularizer_gradient() {
        let (m, d) = toy(ModelKind::LeastSquares, 1, false, 0.3);
        let mut w = vec![0.0; m.num_params()];
        w[0] = 1.0;
        let (l, g) = m.loss_and_grad(&w, &d, &[]);
        assert!((l - 0.15).abs() < 1e-15);
        assert_eq!(g, vec![0.3, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn iid_shapes_and_weights() {
        let ds = generate_synthetic_iid(IidTask::Classification, &mut rng(1)).unwrap();
        assert_eq!(ds.num_clients(), 100);
        assert!(ds.clients.iter().all(|c| c.num_samples() == 100 && c.validation.len() == 20));
        assert!(ds.weights().iter().all(|&p| (p - 0.01).abs() < 1e-15));
        let mut seen = [0usize; 10];
        for c in &ds.clients {
            for &y in &c.train.targets {
                seen[y as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n > 300), "{seen:?}");
        let again = generate_synthetic_iid(IidTask::Classification, &mut rng(1)).unwrap();
        assert_eq!(serde_json::to_string(&ds).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn iid_feature_means_near_zero() {
        let ds = generate_synthetic_iid(IidTask::Regression, &mut rng(2)).unwrap();
        let pooled = ds.pooled_train();
        let n = pooled.len() as f64;
        for j in 0..ds.dim {
            let mean: f64 = (0..pooled.len()).map(|i| pooled.row(i)[j]).sum::<f64>() / n;
            assert!(mean.abs() < 4.0 / n.sqrt(), "coordinate {j}: {mean}");
        }
    }

    #[test]
    fn split_floor_rule() {
        let s = Samples::new(1, (0..7).map(f64::from).collect(), vec![0.0; 7]).unwrap();
        let c = ClientDataset::split(s.clone(), 0.2).unwrap();
        assert_eq!((c.train.len(), c.validation.len()), (6, 1));
        let c = ClientDataset::split(s, 0.5).unwrap();
        assert_eq!((c.train.len(), c.validation.len()), (4, 3));
        assert_eq!(c.validation.features, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn alpha_fixed_sizes_and_classes() {
        for seed in 0..5 {
            let ds = generate_synthetic_alpha(1.0, 1.0, 10, ClientSizes::Fixed { n: 50 }, 20, 10, &mut rng(seed)).unwrap();
            let mut classes = std::collections::BTreeSet::new();
            for c in &ds.clients {
                classes.extend(c.train.targets.iter().map(|&y| y as usize));
            }
            assert!(classes.len() >= 2);
            assert!(ds.weights().iter().all(|&p| (p - 0.1).abs() < 1e-15));
        }
    }

    #[test]
    fn lognormal_sizes_give_uneven_weights() {
        let ds = generate_synthetic_alpha(1.0, 1.0, 30, ClientSizes::default(), 10, 5, &mut rng(3)).unwrap();
        let max = ds.weights().iter().copied().fold(0.0, f64::max);
        let min = ds.weights().iter().copied().fold(1.0, f64::min);
        assert!(max / min > 5.0);
        assert!(ds.clients.iter().all(|c| c.num_samples() >= 50));
        assert!((ds.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_prediction_accuracy_is_class_frequency() {
        let ds = generate_synthetic_alpha(0.5, 0.5, 5, ClientSizes::Fixed { n: 40 }, 6, 4, &mut rng(4)).unwrap();
        let m = GlmModel::for_dataset(&ds, 0.0, true);
        let mut w = vec![0.0; m.num_params()];
        // bias of class 2 dominates
        w[2 * m.row_len() + m.dim] = 10.0;
        let acc = m.evaluate(&w, &ds, EvalMode::PerSample).accuracy;
        let (mut hit, mut n) = (0, 0);
        for c in &ds.clients {
            hit += c.validation.targets.iter().filter(|&&y| y == 2.0).count();
            n += c.validation.len();
        }
        assert!((acc - hit as f64 / n as f64).abs() < 1e-15);
        let zero = vec![0.0; m.num_params()];
        assert!((m.evaluate(&zero, &ds, EvalMode::PerUser).loss - 4f64.ln()).abs() < 1e-12);
        let a = m.evaluate(&w, &ds, EvalMode::PerSample).accuracy;
        let b = m.evaluate(&w, &ds, EvalMode::PerUser).accuracy;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ridge_optimum_has_zero_gradient() {
        let ds = DatasetSpec::SyntheticIid {
            task: IidTask::Regression,
            num_clients: 4,
            samples_per_client: 30,
            dim: 5,
            num_classes: 10,
        }
        .generate(0.2, &mut rng(6))
        .unwrap();
        let m = GlmModel::for_dataset(&ds, 0.01, true);
        let (w, f) = ridge_optimum(&m, &ds).unwrap();
        let mut g = vec![0.0; w.len()];
        for (c, p) in ds.clients.iter().zip(ds.weights()) {
            let idx: Vec<usize> = (0..c.train.len()).collect();
            let (_, gk) = m.loss_and_grad(&w, &c.train, &idx);
            for (a, b) in g.iter_mut().zip(gk) {
                *a += p * b;
            }
        }
        assert!(g.iter().all(|v| v.abs() < 1e-9), "{g:?}");
        let mut shifted = w.clone();
        shifted[0] += 1e-3;
        assert!(m.global_objective(&shifted, &ds) > f);
        let curv = least_squares_curvature(&m, &ds).unwrap();
        assert!(curv.mu_global >= 0.01 - 1e-12 && curv.l_client_max >= curv.l_global - 1e-9);
    }

    #[test]
    fn strong_convexity_spot_check() {
        let (m, d) = toy(ModelKind::Softmax, 3, true, 0.05);
        let idx: Vec<usize> = (0..d.len()).collect();
        let mut r = rng(8);
        for _ in 0..50 {
            let w = normal_vec(m.num_params(), 1.0, &mut r);
            let v = normal_vec(m.num_params(), 1.0, &mut r);
            let (fw, g) = m.loss_and_grad(&w, &d, &idx);
            let (fv, _) = m.loss_and_grad(&v, &d, &idx);
            let diff: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a - b).collect();
            let lin: f64 = g.iter().zip(&diff).map(|(a, b)| a * b).sum();
            let sq: f64 = diff.iter().map(|a| a * a).sum();
            assert!(fv >= fw + lin + 0.5 * m.l2 * sq - 1e-12);
        }
    }

    #[test]
    fn dump_roundtrip() {
        let ds = generate_synthetic_alpha(0.0, 0.0, 3, ClientSizes::Fixed { n: 10 }, 3, 2, &mut rng(7)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        ds.save_json(&path).unwrap();
        assert_eq!(FederatedDataset::load_json(&path).unwrap(), ds);
    }
}
