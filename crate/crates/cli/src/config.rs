//! TOML experiment configuration. See `configs/SCHEMA.md` for the format.

use std::path::{Path, PathBuf};

use demp_core::engine::{DeathCriterion, DempConfig, NoiseMode, Regularizer, TrainSettings};
use demp_core::nn::{Activation, Network, NetworkBuilder};
use demp_core::optim::{OptimizerKind, DEFAULT_ADAM_EPS, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_MOMENTUM};
use demp_core::schedule::{ScheduleKind, ScheduleSpec, DEFAULT_WARMUP_FRACTION};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub steps: u64,
    pub seeds: Vec<u64>,
    /// Default output root; overridden by `--out` and `DEMP_OUT`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub demp: DempSection,
    pub data: DataConfig,
    #[serde(default)]
    pub run: RunConfig,
    /// Variants; each is merged over the base document.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<toml::Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Mlp {
        input_shape: Vec<usize>,
        hidden: Vec<usize>,
        outputs: usize,
        #[serde(default = "default_activation")]
        activation: String,
        #[serde(default)]
        activation_param: Option<f64>,
        #[serde(default)]
        batch_norm: bool,
    },
    Layers {
        input_shape: Vec<usize>,
        layers: Vec<LayerConfig>,
    },
}

fn default_activation() -> String {
    "relu".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerConfig {
    Dense {
        outputs: usize,
    },
    Conv2d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    BatchNorm,
    Activation {
        name: String,
        #[serde(default)]
        param: Option<f64>,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: String,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Decoupled weight decay.
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub lr_milestones: Vec<u64>,
    #[serde(default = "unit")]
    pub lr_decay: f64,
}

fn default_momentum() -> f64 {
    DEFAULT_MOMENTUM
}
fn default_beta1() -> f64 {
    DEFAULT_BETA1
}
fn default_beta2() -> f64 {
    DEFAULT_BETA2
}
fn default_eps() -> f64 {
    DEFAULT_ADAM_EPS
}
fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_schedule_kind")]
    pub kind: ScheduleKind,
    pub peak: f64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
}

fn default_schedule_kind() -> ScheduleKind {
    ScheduleKind::OneCycle
}
fn default_warmup() -> f64 {
    DEFAULT_WARMUP_FRACTION
}

impl ScheduleConfig {
    fn zero() -> Self {
        Self { kind: ScheduleKind::Constant, peak: 0.0, warmup_fraction: DEFAULT_WARMUP_FRACTION }
    }

    pub fn spec(&self, steps: u64) -> ScheduleSpec {
        ScheduleSpec { kind: self.kind, peak: self.peak, total_steps: steps, warmup_fraction: self.warmup_fraction }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DempSection {
    #[serde(default = "ScheduleConfig::zero")]
    pub lambda: ScheduleConfig,
    #[serde(default = "ScheduleConfig::zero")]
    pub sigma2: ScheduleConfig,
    #[serde(default = "default_prune_period")]
    pub prune_period: u64,
    #[serde(default = "default_threshold")]
    pub death_threshold: f64,
    #[serde(default = "default_probe")]
    pub probe_size: usize,
    #[serde(default = "default_criterion")]
    pub criterion: DeathCriterion,
    #[serde(default = "default_regularizer")]
    pub regularizer: Regularizer,
    #[serde(default = "default_noise")]
    pub noise: NoiseMode,
    #[serde(default)]
    pub dynamic_pruning: bool,
}

fn default_prune_period() -> u64 {
    demp_core::engine::DEFAULT_PRUNE_PERIOD
}
fn default_threshold() -> f64 {
    demp_core::engine::DEFAULT_DEATH_THRESHOLD
}
fn default_probe() -> usize {
    demp_core::engine::DEFAULT_PROBE_SIZE
}
fn default_criterion() -> DeathCriterion {
    DeathCriterion::ZeroOutput
}
fn default_regularizer() -> Regularizer {
    Regularizer::LassoScale
}
fn default_noise() -> NoiseMode {
    NoiseMode::Off
}

impl Default for DempSection {
    fn default() -> Self {
        Self {
            lambda: ScheduleConfig::zero(),
            sigma2: ScheduleConfig::zero(),
            prune_period: default_prune_period(),
            death_threshold: default_threshold(),
            probe_size: default_probe(),
            criterion: default_criterion(),
            regularizer: default_regularizer(),
            noise: default_noise(),
            dynamic_pruning: false,
        }
    }
}

impl DempSection {
    pub fn to_demp(&self, steps: u64) -> DempConfig {
        DempConfig {
            lambda: self.lambda.spec(steps),
            sigma2: self.sigma2.spec(steps),
            prune_period: self.prune_period,
            death_threshold: self.death_threshold,
            probe_size: self.probe_size,
            criterion: self.criterion,
            regularizer: self.regularizer,
            noise_mode: self.noise,
            dynamic_pruning: self.dynamic_pruning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// IDX image/label pair in `path`; a seeded `subset` is split into
    /// `train_size` training examples and a held-out evaluation remainder.
    Mnist {
        path: PathBuf,
        subset: usize,
        train_size: usize,
        batch_size: usize,
        #[serde(default)]
        split_seed: u64,
    },
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        #[serde(default)]
        blob_seed: u64,
        /// Fraction held out for evaluation (0: evaluate on the training set).
        #[serde(default)]
        eval_fraction: f64,
        batch_size: usize,
    },
}

impl DataConfig {
    pub fn batch_size(&self) -> usize {
        match self {
            DataConfig::Mnist { batch_size, .. } | DataConfig::Blobs { batch_size, .. } => *batch_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_metrics_every")]
    pub metrics_every: u64,
    /// 0: evaluate at the final step only.
    #[serde(default)]
    pub eval_every: u64,
    /// Added to the run seed for the probe shuffle.
    #[serde(default = "default_probe_offset")]
    pub probe_seed_offset: u64,
}

fn default_metrics_every() -> u64 {
    100
}
fn default_probe_offset() -> u64 {
    10_000
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { metrics_every: default_metrics_every(), eval_every: 0, probe_seed_offset: default_probe_offset() }
    }
}

/// One concrete run configuration: the base document with one sweep entry applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variant {
    /// Empty for configs without a sweep.
    pub label: String,
    pub config: ExperimentConfig,
    /// Hex SHA-256 of the canonical JSON form of `config`.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn optimizer_kind(&self) -> Result<OptimizerKind, String> {
        let o = &self.optimizer;
        let kind = match o.kind.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "sgdm" => OptimizerKind::Sgdm { momentum: o.momentum },
            "adam" => OptimizerKind::Adam { beta1: o.beta1, beta2: o.beta2, eps: o.eps },
            other => return Err(format!("optimizer.kind: unknown optimizer '{other}' (sgd, sgdm, adam)")),
        };
        kind.validate().map_err(|e| format!("optimizer: {e}"))?;
        Ok(kind)
    }

    pub fn demp_config(&self) -> DempConfig {
        self.demp.to_demp(self.steps)
    }

    /// Training settings for one seed. Data order uses the seed itself; the
    /// probe shuffle uses `seed + probe_seed_offset`.
    pub fn train_settings(&self, seed: u64) -> TrainSettings {
        TrainSettings {
            steps: self.steps,
            batch_size: self.data.batch_size(),
            lr: self.optimizer.lr,
            lr_milestones: self.optimizer.lr_milestones.clone(),
            lr_decay: self.optimizer.lr_decay,
            weight_decay: self.optimizer.weight_decay,
            metrics_every: self.run.metrics_every,
            eval_every: self.run.eval_every,
            data_seed: seed,
            probe_seed: seed.wrapping_add(self.run.probe_seed_offset),
        }
    }

    pub fn build_network<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Network, String> {
        let act = |name: &str, param: Option<f64>| {
            Activation::from_name(name, param).ok_or_else(|| format!("unknown activation '{name}'"))
        };
        let net = match &self.model {
            ModelConfig::Mlp { input_shape, hidden, outputs, activation, activation_param, batch_norm } => {
                let a = act(activation, *activation_param)?;
                demp_core::nn::mlp(input_shape, hidden, *outputs, a, *batch_norm, rng)
            }
            ModelConfig::Layers { input_shape, layers } => {
                let mut b = NetworkBuilder::new(input_shape);
                for l in layers {
                    b = match l {
                        LayerConfig::Dense { outputs } => b.dense(*outputs, rng),
                        LayerConfig::Conv2d { out_channels, kernel, stride, padding } => {
                            b.conv2d(*out_channels, (*kernel, *kernel), *stride, *padding, rng)
                        }
                        LayerConfig::BatchNorm => b.batch_norm(),
                        LayerConfig::Activation { name, param } => b.activation(act(name, *param)?),
                    };
                }
                b.build()
            }
        };
        net.map_err(|e| format!("model: {e}"))
    }

    /// Checks everything that can be checked without touching data files.
    pub fn validate(&self) -> Result<(), String> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(format!("name: '{}' must be a non-empty file-name component", self.name));
        }
        if self.seeds.is_empty() {
            return Err("seeds: at least one seed required".into());
        }
        self.optimizer_kind()?;
        self.train_settings(0).validate().map_err(|e| format!("optimizer/run: {e}"))?;
        self.demp_config().validate(self.steps).map_err(|e| format!("demp: {e}"))?;
        self.build_network(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).map(|_| ())
    }

    pub fn canonical_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn merge(base: &mut toml::Table, overlay: &toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Parses and validates a config document, expanding its sweep into variants.
pub fn parse_config(text: &str, path: &Path) -> Result<Vec<Variant>, ConfigError> {
    let shown = path.display().to_string();
    let base: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigError::Parse { path: shown.clone(), line, column, message: e.message().to_string() }
    })?;
    let invalid = |message: String| ConfigError::Invalid { path: shown.clone(), message };
    let mut variants = Vec::new();
    if base.sweep.is_empty() {
        base.validate().map_err(invalid)?;
        variants.push(Variant { label: String::new(), hash: base.canonical_hash(), config: base });
        return Ok(variants);
    }
    let mut doc: toml::Table = toml::from_str(text).expect("already parsed");
    doc.remove("sweep");
    for (i, entry) in base.sweep.iter().enumerate() {
        let mut entry = entry.clone();
        let label = match entry.remove("label") {
            Some(toml::Value::String(s)) if !s.is_empty() && !s.contains(['/', '\\']) => s,
            _ => return Err(invalid(format!("sweep[{i}]: needs a 'label' string usable as a file name"))),
        };
        if variants.iter().any(|v: &Variant| v.label == label) {
            return Err(invalid(format!("sweep[{i}]: duplicate label '{label}'")));
        }
        let mut merged = doc.clone();
        merge(&mut merged, &entry);
        let cfg: ExperimentConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| invalid(format!("sweep[{i}] ('{label}'): {}", e.message())))?;
        cfg.validate().map_err(|m| invalid(format!("sweep[{i}] ('{label}'): {m}")))?;
        variants.push(Variant { label, hash: cfg.canonical_hash(), config: cfg });
    }
    Ok(variants)
}

pub fn load_config(path: &Path) -> Result<(String, Vec<Variant>), ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    let variants = parse_config(&text, path)?;
    Ok((text, variants))
}
