//! Experiment configuration files.
//!
//! Configs are TOML. Every section rejects unknown keys, and range errors name
//! the offending field together with the line it was set on.

use std::fmt;
use std::path::{Path, PathBuf};

use fedlab_core::aggregate::{GuardMomentum, NormScope, DEFAULT_EPSILON};
use fedlab_core::data::{LabelMode, SizeMode};
use fedlab_core::nn::NetworkSpec;
use fedlab_core::{
    AggregationStrategy, ClientConfig, ExperimentConfig, PartitionSpec, StrategyKind, WeightMode,
};
use serde::{Deserialize, Serialize};

/// Image side length and class count of MNIST.
pub const MNIST_FEATURES: usize = 28 * 28;
pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: ExperimentSection,
    pub dataset: DatasetSection,
    pub partition: PartitionSection,
    pub client: ClientSection,
    pub network: NetworkSection,
    pub strategy: StrategySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub rounds: usize,
    pub fraction: f64,
    pub clients: usize,
    pub seed: u64,
    #[serde(default)]
    pub weight_mode: WeightMode,
    #[serde(default = "default_true")]
    pub eval_dual: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Mnist,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DataSource,
    /// Seed for synthetic generation and subset sampling; follows the experiment seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_true")]
    pub normalize: bool,

    // mnist
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_subset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<IdxFiles>,

    // synthetic
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
}

/// File names inside the dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxFiles {
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
}

impl Default for IdxFiles {
    fn default() -> Self {
        IdxFiles {
            train_images: "train-images-idx3-ubyte".into(),
            train_labels: "train-labels-idx1-ubyte".into(),
            test_images: "t10k-images-idx3-ubyte".into(),
            test_labels: "t10k-labels-idx1-ubyte".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub labels: LabelMode,
    pub sizes: SizeMode,
    #[serde(default = "default_classes_per_client")]
    pub classes_per_client: usize,
    #[serde(default = "default_power_exponent")]
    pub power_exponent: f64,
    /// Follows the experiment seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSection {
    pub eta: f64,
    #[serde(default)]
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub kind: StrategyKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub scope: NormScope,
    #[serde(default)]
    pub guard_momentum: GuardMomentum,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fedprox: Option<FedProxParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normnorm: Option<NormNormParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<MomentumParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fednnnn: Option<FedNnnnParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedProxParams {
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormNormParams {
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentumParams {
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedNnnnParams {
    pub beta: f64,
    pub gamma: f64,
}

fn default_true() -> bool {
    true
}

fn default_classes_per_client() -> usize {
    2
}

fn default_power_exponent() -> f64 {
    1.5
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub file: Option<PathBuf>,
    pub line: Option<usize>,
    /// Dotted key path such as `strategy.fednnnn.gamma`; empty for syntax errors.
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{}", file.display())?;
            if let Some(line) = self.line {
                write!(f, ":{line}")?;
            }
            write!(f, ": ")?;
        } else if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if !self.field.is_empty() {
            write!(f, "{}: ", self.field)?;
        }
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

impl FileConfig {
    /// Parses and validates a config document. `file` only labels errors.
    pub fn parse(src: &str, file: Option<&Path>) -> Result<FileConfig, ConfigError> {
        let cfg: FileConfig = toml::from_str(src).map_err(|e| ConfigError {
            file: file.map(Path::to_path_buf),
            line: e.span().map(|s| line_of_offset(src, s.start)),
            field: String::new(),
            message: e.message().trim_end().to_string(),
        })?;
        cfg.check().map_err(|(field, message)| ConfigError {
            file: file.map(Path::to_path_buf),
            line: locate(src, &field),
            field,
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<FileConfig, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: Some(path.to_path_buf()),
            line: None,
            field: String::new(),
            message: format!("cannot read config: {e}"),
        })?;
        FileConfig::parse(&src, Some(path))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn dataset_seed(&self) -> u64 {
        self.dataset.seed.unwrap_or(self.experiment.seed)
    }

    pub fn partition_seed(&self) -> u64 {
        self.partition.seed.unwrap_or(self.experiment.seed)
    }

    /// Replaces the experiment seed. Dataset and partition seeds that the file
    /// leaves unset follow it.
    pub fn set_seed(&mut self, seed: u64) {
        self.experiment.seed = seed;
    }

    /// Pins every derived seed so the snapshot reproduces the run on its own.
    pub fn resolve_seeds(&mut self) {
        self.dataset.seed = Some(self.dataset_seed());
        self.partition.seed = Some(self.partition_seed());
    }

    /// Input width and class count of the data this config loads.
    pub fn data_shape(&self) -> (usize, usize) {
        match self.dataset.source {
            DataSource::Mnist => (MNIST_FEATURES, MNIST_CLASSES),
            DataSource::Synthetic => (
                self.dataset.feature_dim.unwrap_or(0),
                self.dataset.classes.unwrap_or(0),
            ),
        }
    }

    /// Human-readable scenario label, e.g. `synthetic non-IID-UB`.
    pub fn scenario(&self) -> String {
        let source = match self.dataset.source {
            DataSource::Mnist => "MNIST",
            DataSource::Synthetic => "synthetic",
        };
        format!("{source} {}", partition_label(&self.partition))
    }

    /// The experiment this file describes with the aggregation strategy replaced by `kind`.
    pub fn experiment_for(&self, kind: StrategyKind) -> Result<ExperimentConfig, ConfigError> {
        let missing = |field: &str| ConfigError {
            file: None,
            line: None,
            field: field.to_string(),
            message: format!("required by strategy {kind} but missing"),
        };
        let s = &self.strategy;
        let mut strategy = AggregationStrategy::new(kind);
        strategy.epsilon = s.epsilon;
        strategy.scope = s.scope;
        strategy.guard_momentum = s.guard_momentum;
        let mut mu = 0.0;
        match kind {
            StrategyKind::FedAvg => {}
            StrategyKind::FedProx => {
                mu = s.fedprox.ok_or_else(|| missing("strategy.fedprox.mu"))?.mu
            }
            StrategyKind::NormNorm => {
                strategy.beta = s
                    .normnorm
                    .ok_or_else(|| missing("strategy.normnorm.beta"))?
                    .beta
            }
            StrategyKind::Momentum => {
                strategy.gamma = s
                    .momentum
                    .ok_or_else(|| missing("strategy.momentum.gamma"))?
                    .gamma
            }
            StrategyKind::FedNnnn => {
                let p = s.fednnnn.ok_or_else(|| missing("strategy.fednnnn"))?;
                strategy.beta = p.beta;
                strategy.gamma = p.gamma;
            }
        }
        let (input, classes) = self.data_shape();
        let layer_sizes = std::iter::once(input)
            .chain(self.network.hidden.iter().copied())
            .chain(std::iter::once(classes))
            .collect();
        let network = NetworkSpec::new(layer_sizes).map_err(|e| ConfigError {
            file: None,
            line: None,
            field: "network.hidden".into(),
            message: e.to_string(),
        })?;
        let cfg = ExperimentConfig {
            rounds: self.experiment.rounds,
            fraction: self.experiment.fraction,
            clients: self.experiment.clients,
            client: ClientConfig {
                eta: self.client.eta,
                lambda: self.client.lambda,
                batch_size: self.client.batch_size,
                epochs: self.client.epochs,
                mu,
            },
            strategy,
            partition: PartitionSpec {
                label_mode: self.partition.labels,
                size_mode: self.partition.sizes,
                classes_per_client: self.partition.classes_per_client,
                power_exponent: self.partition.power_exponent,
                seed: self.partition_seed(),
            },
            network,
            seed: self.experiment.seed,
            weight_mode: self.experiment.weight_mode,
            eval_dual: self.experiment.eval_dual,
        };
        cfg.validate().map_err(|e| ConfigError {
            file: None,
            line: None,
            field: String::new(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Range checks. Returns the dotted field path and a message on failure.
    fn check(&self) -> Result<(), (String, String)> {
        let fail = |field: &str, msg: String| Err((field.to_string(), msg));
        let e = &self.experiment;
        if e.rounds == 0 {
            return fail("experiment.rounds", "must be at least 1".into());
        }
        if !(e.fraction > 0.0 && e.fraction <= 1.0) {
            return fail(
                "experiment.fraction",
                format!("must be in (0, 1], got {}", e.fraction),
            );
        }
        if e.clients == 0 {
            return fail("experiment.clients", "must be at least 1".into());
        }
        check_seed("experiment.seed", e.seed)?;

        let d = &self.dataset;
        if let Some(seed) = d.seed {
            check_seed("dataset.seed", seed)?;
        }
        let (mnist_only, synth_only) = (
            [
                ("dir", d.dir.is_some()),
                ("train_subset", d.train_subset.is_some()),
                ("test_subset", d.test_subset.is_some()),
                ("files", d.files.is_some()),
            ],
            [
                ("classes", d.classes),
                ("train_per_class", d.train_per_class),
                ("test_per_class", d.test_per_class),
                ("feature_dim", d.feature_dim),
            ],
        );
        match d.source {
            DataSource::Mnist => {
                if let Some((key, _)) = synth_only.iter().find(|(_, v)| v.is_some()) {
                    return fail(
                        &format!("dataset.{key}"),
                        "only applies to source = \"synthetic\"".into(),
                    );
                }
                for (key, v) in [
                    ("train_subset", d.train_subset),
                    ("test_subset", d.test_subset),
                ] {
                    if v == Some(0) {
                        return fail(&format!("dataset.{key}"), "must be at least 1".into());
                    }
                }
            }
            DataSource::Synthetic => {
                if let Some((key, _)) = mnist_only.iter().find(|(_, set)| *set) {
                    return fail(
                        &format!("dataset.{key}"),
                        "only applies to source = \"mnist\"".into(),
                    );
                }
                for (key, v) in synth_only {
                    match v {
                        None => {
                            return fail(
                                &format!("dataset.{key}"),
                                "required for synthetic data".into(),
                            )
                        }
                        Some(0) => {
                            return fail(&format!("dataset.{key}"), "must be at least 1".into())
                        }
                        Some(_) => {}
                    }
                }
                if d.classes < Some(2) {
                    return fail("dataset.classes", "need at least 2 classes".into());
                }
            }
        }

        let p = &self.partition;
        let classes = self.data_shape().1;
        if p.classes_per_client == 0 || p.classes_per_client > classes {
            return fail(
                "partition.classes_per_client",
                format!("must be in 1..={classes}, got {}", p.classes_per_client),
            );
        }
        if !(p.power_exponent > 0.0 && p.power_exponent.is_finite()) {
            return fail(
                "partition.power_exponent",
                format!("must be positive, got {}", p.power_exponent),
            );
        }
        if let Some(seed) = p.seed {
            check_seed("partition.seed", seed)?;
        }

        let c = &self.client;
        if !(c.eta > 0.0 && c.eta.is_finite()) {
            return fail("client.eta", format!("must be positive, got {}", c.eta));
        }
        if !(c.lambda >= 0.0 && c.lambda.is_finite()) {
            return fail("client.lambda", format!("must be >= 0, got {}", c.lambda));
        }
        if c.batch_size == 0 {
            return fail("client.batch_size", "must be at least 1".into());
        }
        if c.epochs == 0 {
            return fail("client.epochs", "must be at least 1".into());
        }

        if self.network.hidden.contains(&0) {
            return fail("network.hidden", "layer widths must be at least 1".into());
        }

        let s = &self.strategy;
        if !(s.epsilon > 0.0 && s.epsilon.is_finite()) {
            return fail(
                "strategy.epsilon",
                format!("must be positive, got {}", s.epsilon),
            );
        }
        if let Some(p) = s.fedprox {
            if !(p.mu >= 0.0 && p.mu.is_finite()) {
                return fail("strategy.fedprox.mu", format!("must be >= 0, got {}", p.mu));
            }
        }
        if let Some(p) = s.normnorm {
            check_beta("strategy.normnorm.beta", p.beta)?;
        }
        if let Some(p) = s.momentum {
            check_gamma("strategy.momentum.gamma", p.gamma)?;
        }
        if let Some(p) = s.fednnnn {
            check_beta("strategy.fednnnn.beta", p.beta)?;
            check_gamma("strategy.fednnnn.gamma", p.gamma)?;
        }
        let needed = match s.kind {
            StrategyKind::FedAvg => None,
            StrategyKind::FedProx => s.fedprox.is_none().then_some("strategy.fedprox"),
            StrategyKind::NormNorm => s.normnorm.is_none().then_some("strategy.normnorm"),
            StrategyKind::Momentum => s.momentum.is_none().then_some("strategy.momentum"),
            StrategyKind::FedNnnn => s.fednnnn.is_none().then_some("strategy.fednnnn"),
        };
        if let Some(table) = needed {
            return fail(
                table,
                format!("table required by strategy.kind = \"{}\"", s.kind),
            );
        }
        Ok(())
    }
}

pub fn partition_label(p: &PartitionSection) -> &'static str {
    match (p.labels, p.sizes) {
        (LabelMode::Iid, SizeMode::Balanced) => "IID-B",
        (LabelMode::NonIid, SizeMode::Balanced) => "non-IID-B",
        (LabelMode::Iid, SizeMode::Unbalanced) => "IID-UB",
        (LabelMode::NonIid, SizeMode::Unbalanced) => "non-IID-UB",
    }
}

fn check_beta(field: &str, beta: f64) -> Result<(), (String, String)> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err((field.into(), format!("must be positive, got {beta}")))
    }
}

fn check_gamma(field: &str, gamma: f64) -> Result<(), (String, String)> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err((field.into(), format!("must be in [0, 1), got {gamma}")))
    }
}

/// TOML integers are signed 64-bit, so larger seeds could not be written back.
fn check_seed(field: &str, seed: u64) -> Result<(), (String, String)> {
    if seed <= i64::MAX as u64 {
        Ok(())
    } else {
        Err((
            field.into(),
            format!("must be at most {}, got {seed}", i64::MAX),
        ))
    }
}

fn line_of_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// 1-based line on which a dotted key is set, or where its table starts.
fn locate(src: &str, field: &str) -> Option<usize> {
    let (table, key) = field.rsplit_once('.')?;
    let mut current = String::new();
    let mut table_line = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = header.trim().to_string();
            if current == field {
                table_line = Some(i + 1);
            }
            continue;
        }
        if current == table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    table_line
}
