//! Experiment configuration and its flat `key = value` file format.
//!
//! ```text
//! # comment
//! mode = DpSecAgg
//! num_clients = 10
//! privacy.epsilon = 6.0
//! secagg.threshold = 4
//! ```
//!
//! Keys are dotted paths; values are bare tokens. Later assignments win, so
//! command-line overrides are applied after the file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{PartitionConfig, DEFAULT_SEPARATION};
use crate::dp::calibrate_sigma;
use crate::harness::{DropoutModel, DropoutScript};
use crate::secagg::{KeyMode, SecAggConfig};
use crate::types::{Mode, PrivacyParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}: {msg}")]
    Syntax { origin: String, line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Multinomial logistic regression.
    Linear,
    /// One hidden layer with GroupNorm and ReLU.
    GnMlp,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ModelKind::Linear),
            "gn_mlp" | "gnmlp" | "mlp" => Ok(ModelKind::GnMlp),
            _ => Err(format!("unknown model kind `{s}` (expected linear or gn_mlp)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "linear",
            ModelKind::GnMlp => "gn_mlp",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub spread: f64,
    pub separation: f64,
    /// Share of generated samples held out for evaluation.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            dim: 32,
            samples_per_class: 250,
            spread: 1.0,
            separation: DEFAULT_SEPARATION,
            test_fraction: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub groups: usize,
    /// Standard deviation of the linear model's initial weights.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Linear,
            hidden: 64,
            groups: 32,
            init_scale: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 0.5, batch_size: 32 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    /// Output root; `None` defers to the environment or `out`.
    pub out: Option<String>,
    pub num_clients: usize,
    pub rounds: u32,
    pub local_epochs: usize,
    pub mode: Mode,
    /// `noise_scale` is derived from the other three fields unless
    /// `sigma_override` is set; see [`ExperimentConfig::resolve`].
    pub privacy: PrivacyParams,
    pub sigma_override: Option<f64>,
    pub secagg: SecAggConfig,
    pub seed: u64,
    pub partition: PartitionConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dropouts: DropoutScript,
    /// Record wall-clock time per round. Off by default so that report
    /// files are bit-identical across replays.
    pub wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            name: "experiment".into(),
            out: None,
            num_clients: 10,
            rounds: 50,
            local_epochs: 3,
            mode: Mode::DpSecAgg,
            privacy: PrivacyParams {
                epsilon: 6.0,
                delta: 1.9e-4,
                clip_norm: 7.0,
                noise_scale: 0.0,
            },
            sigma_override: None,
            secagg: SecAggConfig::default(),
            seed: 0,
            partition: PartitionConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dropouts: DropoutScript::default(),
            wall_time: false,
        };
        cfg.resolve().expect("defaults are valid");
        cfg
    }
}

/// Every key accepted by [`ExperimentConfig::set`].
pub const KEYS: &[&str] = &[
    "name",
    "out",
    "num_clients",
    "rounds",
    "local_epochs",
    "mode",
    "seed",
    "privacy.epsilon",
    "privacy.delta",
    "privacy.clip_norm",
    "privacy.sigma",
    "secagg.threshold",
    "secagg.neighbor_degree",
    "secagg.modulus",
    "secagg.scale",
    "secagg.clamp_range",
    "secagg.dropout_model",
    "secagg.dropout_rate",
    "secagg.key_mode",
    "secagg.dropouts",
    "partition.alpha",
    "partition.low_frac",
    "partition.high_frac",
    "data.classes",
    "data.dim",
    "data.samples_per_class",
    "data.spread",
    "data.separation",
    "data.test_fraction",
    "model.kind",
    "model.hidden",
    "model.groups",
    "model.init_scale",
    "train.lr",
    "train.batch_size",
    "report.wall_time",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("bad value `{value}` for {key}: {e}"))
}

impl ExperimentConfig {
    /// Assigns one dotted key. Call [`resolve`](Self::resolve) afterwards.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "name" => self.name = v.to_string(),
            "out" => self.out = Some(v.to_string()),
            "num_clients" => self.num_clients = parse(key, v)?,
            "rounds" => self.rounds = parse(key, v)?,
            "local_epochs" => self.local_epochs = parse(key, v)?,
            "mode" => self.mode = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "privacy.epsilon" => self.privacy.epsilon = parse(key, v)?,
            "privacy.delta" => self.privacy.delta = parse(key, v)?,
            "privacy.clip_norm" => self.privacy.clip_norm = parse(key, v)?,
            "privacy.sigma" => {
                self.sigma_override = if v.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "secagg.threshold" => self.secagg.threshold = parse(key, v)?,
            "secagg.neighbor_degree" => self.secagg.neighbor_degree = parse(key, v)?,
            "secagg.modulus" => self.secagg.field.modulus = parse(key, v)?,
            "secagg.scale" => self.secagg.field.scale = parse(key, v)?,
            "secagg.clamp_range" => self.secagg.field.clamp_range = parse(key, v)?,
            "secagg.dropout_model" => self.secagg.dropout_model = parse::<DropoutModel>(key, v)?,
            "secagg.dropout_rate" => self.secagg.dropout_rate = parse(key, v)?,
            "secagg.key_mode" => self.secagg.key_mode = parse::<KeyMode>(key, v)?,
            "secagg.dropouts" => self.dropouts = parse(key, v)?,
            "partition.alpha" => self.partition.skew_alpha = parse(key, v)?,
            "partition.low_frac" => self.partition.count_low_frac = parse(key, v)?,
            "partition.high_frac" => self.partition.count_high_frac = parse(key, v)?,
            "data.classes" => self.data.classes = parse(key, v)?,
            "data.dim" => self.data.dim = parse(key, v)?,
            "data.samples_per_class" => self.data.samples_per_class = parse(key, v)?,
            "data.spread" => self.data.spread = parse(key, v)?,
            "data.separation" => self.data.separation = parse(key, v)?,
            "data.test_fraction" => self.data.test_fraction = parse(key, v)?,
            "model.kind" => self.model.kind = parse(key, v)?,
            "model.hidden" => self.model.hidden = parse(key, v)?,
            "model.groups" => self.model.groups = parse(key, v)?,
            "model.init_scale" => self.model.init_scale = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "report.wall_time" => self.wall_time = parse(key, v)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Applies the lines of a config file; `origin` names it in errors.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Syntax {
                origin: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            self.set(key, value).map_err(err)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies a `KEY=VALUE` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let err = |msg: String| ConfigError::Syntax {
            origin: "--set".into(),
            line: 1,
            msg,
        };
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| err(format!("expected KEY=VALUE, found `{assignment}`")))?;
        self.set(key, value).map_err(err)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text, "<config>")?;
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Derives dependent fields and validates. Privacy parameters are
    /// checked in every mode so that a bad value is never silently ignored.
    pub fn resolve(&mut self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.partition.num_clients = self.num_clients;
        let p = &mut self.privacy;
        p.noise_scale = match self.sigma_override {
            Some(s) => s,
            None => calibrate_sigma(p.epsilon, p.delta, p.clip_norm).map_err(|e| ConfigError::Invalid(e.to_string()))?,
        };
        if self.sigma_override.is_some_and(|s| (0.0..crate::dp::NOISE_FLOOR).contains(&s)) {
            // Zero-noise runs skip the sigma check but keep the others.
            PrivacyParams { noise_scale: 1.0, ..*p }.validate()
        } else {
            p.validate()
        }
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.num_clients == 0 {
            return invalid("num_clients must be at least 1".into());
        }
        if self.mode.uses_secagg() && self.num_clients < 2 {
            return invalid("secure aggregation needs at least 2 clients".into());
        }
        if self.train.batch_size == 0 {
            return invalid("train.batch_size must be positive".into());
        }
        if !(self.train.lr >= 0.0 && self.train.lr.is_finite()) {
            return invalid("train.lr must be non-negative".into());
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return invalid("data.test_fraction must lie in (0, 1)".into());
        }
        if self.data.classes == 0 || self.data.dim == 0 || self.data.samples_per_class == 0 {
            return invalid("data sizes must be positive".into());
        }
        if !(self.secagg.dropout_rate >= 0.0 && self.secagg.dropout_rate <= 1.0) {
            return invalid("secagg.dropout_rate must lie in [0, 1]".into());
        }
        self.secagg.field.field().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.model.kind == ModelKind::GnMlp && (self.model.groups == 0 || !self.model.hidden.is_multiple_of(self.model.groups)) {
            return invalid(format!(
                "model.hidden ({}) must be a multiple of model.groups ({})",
                self.model.hidden, self.model.groups
            ));
        }
        Ok(())
    }

    /// The configuration as `key = value` lines, readable by [`apply_text`](Self::apply_text).
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("name = {}", self.name),
            format!("num_clients = {}", self.num_clients),
            format!("rounds = {}", self.rounds),
            format!("local_epochs = {}", self.local_epochs),
            format!("mode = {}", self.mode),
            format!("seed = {}", self.seed),
            format!("privacy.epsilon = {}", self.privacy.epsilon),
            format!("privacy.delta = {}", self.privacy.delta),
            format!("privacy.clip_norm = {}", self.privacy.clip_norm),
            format!(
                "privacy.sigma = {}",
                self.sigma_override.map_or("auto".to_string(), |s| s.to_string())
            ),
            format!("secagg.threshold = {}", self.secagg.threshold),
            format!("secagg.neighbor_degree = {}", self.secagg.neighbor_degree),
            format!("secagg.modulus = {}", self.secagg.field.modulus),
            format!("secagg.scale = {}", self.secagg.field.scale),
            format!("secagg.clamp_range = {}", self.secagg.field.clamp_range),
            format!("secagg.dropout_model = {:?}", self.secagg.dropout_model),
            format!("secagg.dropout_rate = {}", self.secagg.dropout_rate),
            format!("secagg.key_mode = {:?}", self.secagg.key_mode),
            format!("secagg.dropouts = {}", self.dropouts),
            format!("partition.alpha = {}", self.partition.skew_alpha),
            format!("partition.low_frac = {}", self.partition.count_low_frac),
            format!("partition.high_frac = {}", self.partition.count_high_frac),
            format!("data.classes = {}", self.data.classes),
            format!("data.dim = {}", self.data.dim),
            format!("data.samples_per_class = {}", self.data.samples_per_class),
            format!("data.spread = {}", self.data.spread),
            format!("data.separation = {}", self.data.separation),
            format!("data.test_fraction = {}", self.data.test_fraction),
            format!("model.kind = {}", self.model.kind),
            format!("model.hidden = {}", self.model.hidden),
            format!("model.groups = {}", self.model.groups),
            format!("model.init_scale = {}", self.model.init_scale),
            format!("train.lr = {}", self.train.lr),
            format!("train.batch_size = {}", self.train.batch_size),
            format!("report.wall_time = {}", self.wall_time),
        ];
        if let Some(out) = &self.out {
            lines.insert(1, format!("out = {out}"));
        }
        lines.join("\n") + "\n"
    }
}
