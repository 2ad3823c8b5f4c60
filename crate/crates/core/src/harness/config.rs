use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{
    load_cifar10_subset, load_mnist_subset, synthetic_blobs, BlobConfig, Splits, DATA_DIR_ENV,
};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::prune::{PruneConfig, ReinitMode};
use crate::stats::Metric;

pub const PRESETS: [&str; 6] = [
    "synthetic-ci",
    "mnist-small",
    "mnist-cnn-small",
    "mnist-paper",
    "mnist-cnn-paper",
    "cifar10-paper",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mlp,
    Cnn,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Hidden widths (MLP) or filter counts (CNN), one per masked layer.
    pub widths: Vec<usize>,
}

impl ModelConfig {
    pub fn build(&self, input: &[usize], classes: usize) -> Result<ModelSpec> {
        let name = self.label();
        match self.arch {
            Arch::Mlp => ModelSpec::mlp(&name, input, &self.widths, classes),
            Arch::Cnn => ModelSpec::cnn(&name, input, &self.widths, classes),
        }
    }

    /// `FC20-FC20`, `Conv64-Conv64`, ...
    pub fn label(&self) -> String {
        let prefix = match self.arch {
            Arch::Mlp => "FC",
            Arch::Cnn => "Conv",
        };
        self.widths
            .iter()
            .map(|w| format!("{prefix}{w}"))
            .collect::<Vec<_>>()
            .join("-")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    Cifar10,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: DatasetName,
    /// Directory with the dataset files; `--data-dir` and the
    /// `DROPNET_DATA_DIR` environment variable take precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Use only the first `subset` samples of the training file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blobs: Option<BlobConfig>,
}

impl DatasetConfig {
    /// Flag, then environment, then config file.
    pub fn resolve_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        if let Some(dir) = flag {
            return Ok(dir.to_path_buf());
        }
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()) {
            return Ok(PathBuf::from(dir));
        }
        self.dir.clone().ok_or_else(|| {
            Error::InvalidConfig(format!(
                "no data directory: pass --data-dir or set {DATA_DIR_ENV}"
            ))
        })
    }

    pub fn load(&self, flag: Option<&Path>) -> Result<Splits> {
        match self.name {
            DatasetName::Mnist => load_mnist_subset(&self.resolve_dir(flag)?, self.subset),
            DatasetName::Cifar10 => load_cifar10_subset(&self.resolve_dir(flag)?, self.subset),
            DatasetName::Synthetic => synthetic_blobs(&self.blobs.clone().unwrap_or_default()),
        }
    }
}

/// Training and stopping settings shared by every run of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub p: f64,
    pub kappa: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub min_fraction: Option<f64>,
    pub one_at_a_time: bool,
    pub max_cycles: Option<usize>,
}

impl Default for Schedule {
    fn default() -> Self {
        let d = PruneConfig::default();
        Schedule {
            p: d.p,
            kappa: d.kappa,
            max_epochs: d.max_epochs,
            patience: d.patience,
            lr: d.lr,
            batch_size: d.batch_size,
            min_fraction: d.min_fraction,
            one_at_a_time: d.one_at_a_time,
            max_cycles: d.max_cycles,
        }
    }
}

impl Schedule {
    pub fn prune_config(&self, metric: Metric, seed: u64, reinit: ReinitMode) -> PruneConfig {
        PruneConfig {
            metric,
            p: self.p,
            kappa: self.kappa,
            max_epochs: self.max_epochs,
            patience: self.patience,
            lr: self.lr,
            batch_size: self.batch_size,
            seed,
            reinit,
            min_fraction: self.min_fraction,
            one_at_a_time: self.one_at_a_time,
            max_cycles: self.max_cycles,
        }
    }
}

/// What selects the units to drop in one series of runs: a metric, a metric
/// whose accuracies come from random reinitialisation (`<metric>+randominit`),
/// or the greedy oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MetricLabel {
    Metric(Metric),
    RandomInit(Metric),
    Oracle,
}

impl MetricLabel {
    pub fn metric(self) -> Metric {
        match self {
            MetricLabel::Metric(m) | MetricLabel::RandomInit(m) => m,
            MetricLabel::Oracle => Metric::Minimum,
        }
    }

    pub fn reinit(self) -> ReinitMode {
        match self {
            MetricLabel::RandomInit(_) => ReinitMode::RandomInit,
            _ => ReinitMode::OriginalInit,
        }
    }
}

impl fmt::Display for MetricLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricLabel::Metric(m) => write!(f, "{m}"),
            MetricLabel::RandomInit(m) => write!(f, "{m}+randominit"),
            MetricLabel::Oracle => f.write_str("oracle"),
        }
    }
}

impl FromStr for MetricLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "oracle" {
            return Ok(MetricLabel::Oracle);
        }
        match s.strip_suffix("+randominit") {
            Some(m) => Ok(MetricLabel::RandomInit(m.parse()?)),
            None => Ok(MetricLabel::Metric(s.parse()?)),
        }
    }
}

impl TryFrom<String> for MetricLabel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MetricLabel> for String {
    fn from(l: MetricLabel) -> String {
        l.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    pub metrics: Vec<MetricLabel>,
    #[serde(default)]
    pub schedule: Schedule,
    /// Number of seeds; run `i` uses `seed + i`.
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    /// Runs executed in parallel.
    #[serde(default = "one")]
    pub jobs: usize,
    /// Evaluate oracle candidates on a fixed random subset of this many
    /// training samples per cycle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_subset: Option<usize>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs < 1 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        if self.jobs < 1 {
            return Err(Error::InvalidConfig("jobs must be at least 1".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one metric is required".into(),
            ));
        }
        if self.model.widths.is_empty() || self.model.widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "model widths must be non-empty and positive".into(),
            ));
        }
        self.schedule
            .prune_config(Metric::Minimum, self.seed, ReinitMode::OriginalInit)
            .validate()
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|i| self.seed + i).collect()
    }

    pub fn preset(name: &str) -> Result<Self> {
        let standard: Vec<MetricLabel> = Metric::STANDARD
            .into_iter()
            .map(MetricLabel::Metric)
            .collect();
        let mlp = |widths: &[usize]| ModelConfig {
            arch: Arch::Mlp,
            widths: widths.to_vec(),
        };
        let cnn = |widths: &[usize]| ModelConfig {
            arch: Arch::Cnn,
            widths: widths.to_vec(),
        };
        let dataset = |name, dir: Option<&str>, subset| DatasetConfig {
            name,
            dir: dir.map(PathBuf::from),
            subset,
            blobs: None,
        };
        let cfg = match name {
            "synthetic-ci" => ExperimentConfig {
                name: name.into(),
                model: mlp(&[8, 8]),
                dataset: DatasetConfig {
                    blobs: Some(BlobConfig {
                        classes: 4,
                        dims: 16,
                        per_class: 150,
                        noise: 0.5,
                        seed: 0,
                        image: false,
                    }),
                    ..dataset(DatasetName::Synthetic, None, None)
                },
                metrics: standard,
                schedule: Schedule {
                    max_epochs: 20,
                    min_fraction: Some(0.3),
                    ..Schedule::default()
                },
                runs: 2,
                seed: 0,
                out: PathBuf::from("out/synthetic-ci"),
                jobs: 1,
                oracle_subset: None,
            },
            "mnist-small" => ExperimentConfig {
                name: name.into(),
                model: mlp(&[20, 20]),
                dataset: dataset(DatasetName::Mnist, Some("data/mnist"), Some(10_000)),
                metrics: standard,
                schedule: Schedule {
                    min_fraction: Some(0.1),
                    ..Schedule::default()
                },
                runs: 3,
                seed: 0,
                out: PathBuf::from("out/mnist-small"),
                jobs: 1,
                oracle_subset: None,
            },
            "mnist-cnn-small" => ExperimentConfig {
                name: name.into(),
                model: cnn(&[8, 8]),
                dataset: dataset(DatasetName::Mnist, Some("data/mnist"), Some(3000)),
                metrics: vec![
                    MetricLabel::Metric(Metric::MinimumLayer),
                    MetricLabel::Metric(Metric::ApozLayer),
                ],
                schedule: Schedule {
                    min_fraction: Some(0.2),
                    ..Schedule::default()
                },
                runs: 3,
                seed: 0,
                out: PathBuf::from("out/mnist-cnn-small"),
                jobs: 1,
                oracle_subset: None,
            },
            "mnist-paper" => ExperimentConfig {
                name: name.into(),
                model: mlp(&[20, 20]),
                dataset: dataset(DatasetName::Mnist, Some("data/mnist"), None),
                metrics: standard,
                schedule: Schedule {
                    min_fraction: Some(0.05),
                    ..Schedule::default()
                },
                runs: 15,
                seed: 0,
                out: PathBuf::from("out/mnist-paper"),
                jobs: 1,
                oracle_subset: None,
            },
            "mnist-cnn-paper" => ExperimentConfig {
                name: name.into(),
                model: cnn(&[64, 64]),
                dataset: dataset(DatasetName::Mnist, Some("data/mnist"), None),
                metrics: standard,
                schedule: Schedule {
                    min_fraction: Some(0.05),
                    ..Schedule::default()
                },
                runs: 15,
                seed: 0,
                out: PathBuf::from("out/mnist-cnn-paper"),
                jobs: 1,
                oracle_subset: None,
            },
            "cifar10-paper" => ExperimentConfig {
                name: name.into(),
                model: cnn(&[64, 64, 128, 128]),
                dataset: dataset(
                    DatasetName::Cifar10,
                    Some("data/cifar-10-batches-bin"),
                    None,
                ),
                metrics: standard,
                schedule: Schedule {
                    min_fraction: Some(0.05),
                    ..Schedule::default()
                },
                runs: 15,
                seed: 0,
                out: PathBuf::from("out/cifar10-paper"),
                jobs: 1,
                oracle_subset: None,
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }
}
