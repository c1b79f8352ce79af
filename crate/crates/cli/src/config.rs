//! JSON run-configuration schema: every hyperparameter of a training run
//! in one declarative document, strictly validated (unknown keys rejected,
//! invariants checked at load) and echoed verbatim into the run summary.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vaekit::models::{Clamps, Objective};
use vaekit::{Activation, DataSource};

/// A configuration problem, reported with the offending field path.
#[derive(Debug, thiserror::Error)]
#[error("config error at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn at(path: &str, message: impl Into<String>) -> ConfigError {
        ConfigError { path: path.to_string(), message: message.into() }
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub diag: DiagConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Deep,
    Seq,
}

/// Hidden-layer activation by name; the clamping activations are installed
/// by the model builders and are not configured directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActName {
    Sigmoid,
    Tanh,
    Softplus,
    Relu,
}

impl ActName {
    pub fn to_activation(self) -> Activation {
        match self {
            ActName::Sigmoid => Activation::Sigmoid,
            ActName::Tanh => Activation::Tanh,
            ActName::Softplus => Activation::Softplus,
            ActName::Relu => Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    pub d_x: usize,
    pub d_z: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_act")]
    pub activation: ActName,
    #[serde(default = "one")]
    pub c2: f64,
    #[serde(default)]
    pub clamps: Clamps,
    /// Per-layer norm bound `a`; required for smoothness reports.
    #[serde(default)]
    pub a: Option<f64>,
    /// Sequential family only: horizon `T` (trajectories have `T+1` steps).
    #[serde(default)]
    pub t_len: usize,
    #[serde(default = "one")]
    pub tau_m2: f64,
    #[serde(default = "one")]
    pub tau_g2: f64,
    /// Sequential family: share one step net across all `t`.
    #[serde(default = "yes")]
    pub shared_steps: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct ObjectiveConfig {
    #[serde(default = "default_objective_kind")]
    pub kind: ObjectiveKind,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one_usize")]
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Elbo,
    BetaElbo,
    Iwae,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig { kind: ObjectiveKind::Elbo, beta: 1.0, k: 1 }
    }
}

impl ObjectiveConfig {
    pub fn to_objective(self) -> Objective {
        match self.kind {
            ObjectiveKind::Elbo => Objective::Elbo,
            ObjectiveKind::BetaElbo => Objective::BetaElbo(self.beta),
            ObjectiveKind::Iwae => Objective::Iwae(self.k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorConfig {
    Score,
    Pathwise,
    PathwiseSampled,
    Iwae,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig::Pathwise
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct OptimConfig {
    #[serde(default = "default_optim_kind")]
    pub kind: OptimKindConfig,
    #[serde(default = "default_c_gamma")]
    pub c_gamma: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKindConfig {
    Sgd,
    Adam,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            kind: OptimKindConfig::Adam,
            c_gamma: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            delta: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceConfig,
    pub n: usize,
    pub seed: u64,
}

/// Data source specification; `LinearGaussianFactor` without an explicit
/// loading matrix draws one deterministically from the data seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    LinearGaussianFactor {
        d_x: usize,
        d_z: usize,
        noise: f64,
        #[serde(default)]
        w: Option<Vec<Vec<f64>>>,
    },
    GaussianMixture {
        components: Vec<vaekit::data::MixtureComponent>,
    },
    CsvFile {
        path: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of gradient updates; `epochs` is a convenience alternative
    /// converted at load (`iterations = n * epochs / b`).
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub epochs: Option<f64>,
    #[serde(alias = "B")]
    pub b: usize,
    #[serde(default = "one_usize", alias = "K_train")]
    pub k_train: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagConfig {
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_eval_mc")]
    pub eval_mc: usize,
    /// Independent gradient replications per evaluation for SNR columns;
    /// 0 disables them (the columns then read 0).
    #[serde(default)]
    pub snr_reps: usize,
    /// Record real wall-clock times. Off by default so that repeated runs
    /// are byte-identical.
    #[serde(default)]
    pub wall_clock: bool,
}

impl Default for DiagConfig {
    fn default() -> Self {
        DiagConfig { eval_every: 100, eval_mc: 256, snr_reps: 0, wall_clock: false }
    }
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_act() -> ActName {
    ActName::Tanh
}
fn default_objective_kind() -> ObjectiveKind {
    ObjectiveKind::Elbo
}
fn default_optim_kind() -> OptimKindConfig {
    OptimKindConfig::Adam
}
fn default_c_gamma() -> f64 {
    0.001
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_delta() -> f64 {
    1e-8
}
fn default_eval_every() -> usize {
    100
}
fn default_eval_mc() -> usize {
    256
}

impl RunConfig {
    /// Parse and validate a JSON configuration string.
    pub fn from_json(text: &str) -> Result<RunConfig, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at("--config", format!("{}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    /// Effective iteration count, with the `epochs` convenience conversion.
    pub fn iterations(&self) -> Result<usize, ConfigError> {
        match (self.train.iterations, self.train.epochs) {
            (Some(i), None) => Ok(i),
            (None, Some(e)) => {
                if !(e >= 0.0) {
                    return Err(ConfigError::at("train.epochs", "must be nonnegative"));
                }
                Ok((self.data.n as f64 * e / self.train.b as f64).round() as usize)
            }
            (Some(_), Some(_)) => {
                Err(ConfigError::at("train", "give either iterations or epochs, not both"))
            }
            (None, None) => Err(ConfigError::at("train", "one of iterations/epochs is required")),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if m.d_x == 0 || m.d_z == 0 {
            return Err(ConfigError::at("model", "d_x and d_z must be positive"));
        }
        if !(m.c2 > 0.0) {
            return Err(ConfigError::at("model.c2", "must be positive"));
        }
        m.clamps.validate().map_err(|e| ConfigError::at("model.clamps", e.to_string()))?;
        if let Some(a) = m.a {
            if !(a > 0.0) {
                return Err(ConfigError::at("model.a", "must be positive"));
            }
        }
        if m.family == Family::Seq && !(m.tau_m2 > 0.0 && m.tau_g2 > 0.0) {
            return Err(ConfigError::at("model.tau_m2", "variances must be positive"));
        }
        if m.family == Family::Linear && !m.hidden.is_empty() {
            return Err(ConfigError::at("model.hidden", "linear family takes no hidden layers"));
        }
        match self.objective.kind {
            ObjectiveKind::BetaElbo if !(self.objective.beta > 0.0) => {
                return Err(ConfigError::at("objective.beta", "must be positive"));
            }
            ObjectiveKind::Iwae if self.objective.k == 0 => {
                return Err(ConfigError::at("objective.k", "K must be >= 1"));
            }
            _ => {}
        }
        let o = &self.optim;
        if !(o.c_gamma > 0.0) {
            return Err(ConfigError::at("optim.c_gamma", "must be positive"));
        }
        if o.kind == OptimKindConfig::Adam && !(o.beta1 < o.beta2.sqrt() && o.beta2 < 1.0) {
            return Err(ConfigError::at("optim.beta1", "Adam requires beta1 < sqrt(beta2) < 1"));
        }
        if self.data.n == 0 {
            return Err(ConfigError::at("data.n", "must be positive"));
        }
        if self.train.b == 0 || self.train.k_train == 0 {
            return Err(ConfigError::at("train.b", "B and K_train must be >= 1"));
        }
        if self.train.b > self.data.n {
            return Err(ConfigError::at("train.b", "B cannot exceed data.n"));
        }
        if self.diag.eval_every == 0 {
            return Err(ConfigError::at("diag.eval_every", "must be >= 1"));
        }
        if self.diag.eval_mc == 0 {
            return Err(ConfigError::at("diag.eval_mc", "must be >= 1"));
        }
        self.iterations()?;
        Ok(())
    }

    /// Materialize the data source (drawing a random loading matrix from
    /// the seed when none is given).
    pub fn data_source(&self) -> Result<DataSource, ConfigError> {
        let src = match &self.data.source {
            SourceConfig::LinearGaussianFactor { d_x, d_z, noise, w } => match w {
                Some(w) => DataSource::LinearGaussianFactor {
                    d_x: *d_x,
                    d_z: *d_z,
                    w: w.clone(),
                    noise: *noise,
                },
                None => DataSource::random_factor(
                    *d_x,
                    *d_z,
                    *noise,
                    vaekit::RngKey::new(self.data.seed).derive_tag("loading"),
                ),
            },
            SourceConfig::GaussianMixture { components } => {
                DataSource::GaussianMixture { components: components.clone() }
            }
            SourceConfig::CsvFile { path } => DataSource::CsvFile { path: path.clone().into() },
        };
        if !matches!(src, DataSource::CsvFile { .. }) {
            src.dim().map_err(|e| ConfigError::at("data.source", e.to_string()))?;
        }
        Ok(src)
    }
}
