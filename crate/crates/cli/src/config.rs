//! Experiment config files: human-readable JSON with a schema version.
//! Unknown keys are hard errors so hyperparameter typos cannot silently
//! fall back to defaults.

use std::path::{Path, PathBuf};

use outreg::mlp::Architecture;
use outreg::regularizers::RegularizerSpec;
use outreg::trainer::TrainConfig;
use outreg::{Error, LabeledDataset, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable consulted for the MNIST data directory when the
/// config leaves `root` unset.
pub const DATA_ROOT_ENV: &str = "OUTREG_DATA_ROOT";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetConfig,
    pub architecture: Architecture,
    pub train: TrainSection,
    /// Objective for `train`; ignored by `gridsearch`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularizer: Option<RegularizerSpec>,
    /// Objectives for `gridsearch`; ignored by `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<RegularizerSpec>>,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
}

/// Per-run hyperparameters shared by every seed and grid point.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_keep_prob: Option<f64>,
}

fn default_max_epochs() -> usize {
    100
}

fn default_batch_size() -> usize {
    64
}

fn default_patience() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// The four IDX files (optionally gzipped) under `root`, falling back
    /// to the `OUTREG_DATA_ROOT` environment variable.
    Mnist {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        root: Option<PathBuf>,
        #[serde(default = "default_mnist_val_size")]
        val_size: usize,
    },
    /// Seeded Gaussian clusters; val/test carved from the tail.
    Synthetic {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
        val_size: usize,
        test_size: usize,
    },
}

fn default_mnist_val_size() -> usize {
    10_000
}

impl ExperimentConfig {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::InvalidConfig(format!(
                "cannot read config {}: {e}",
                path.as_ref().display()
            ))
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        Ok(config)
    }

    /// Structural validation: schema version, architecture, training
    /// hyperparameters, and every regularizer's invariants. Does not
    /// touch the data.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} unsupported, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.architecture.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds list is empty".to_string()));
        }
        // Exercise the trainer's own validation with a placeholder spec.
        self.train_config(RegularizerSpec::none(), self.seeds[0])
            .validate()?;
        let classes = self.architecture.classes;
        if let Some(spec) = &self.regularizer {
            spec.validate_unresolved(classes)?;
        }
        if let Some(grid) = &self.grid {
            if grid.is_empty() {
                return Err(Error::InvalidConfig("grid is empty".to_string()));
            }
            for spec in grid {
                spec.validate_unresolved(classes)?;
            }
        }
        match &self.dataset {
            DatasetConfig::Mnist { .. } => {}
            DatasetConfig::Synthetic {
                classes,
                dim,
                per_class,
                val_size,
                test_size,
                ..
            } => {
                if *classes != self.architecture.classes {
                    return Err(Error::InvalidConfig(format!(
                        "synthetic dataset has {classes} classes, architecture expects {}",
                        self.architecture.classes
                    )));
                }
                if *dim != self.architecture.input_dim {
                    return Err(Error::InvalidConfig(format!(
                        "synthetic dataset is {dim}-dimensional, architecture expects {}",
                        self.architecture.input_dim
                    )));
                }
                let total = classes * per_class;
                if val_size + test_size >= total {
                    return Err(Error::InvalidConfig(format!(
                        "val {val_size} + test {test_size} leave no training rows out of {total}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The regularizer `train` runs, or a config error naming the field.
    pub fn train_regularizer(&self) -> Result<RegularizerSpec> {
        self.regularizer.clone().ok_or_else(|| {
            Error::InvalidConfig("the train command needs a `regularizer` section".to_string())
        })
    }

    /// The grid `gridsearch` sweeps, or a config error naming the field.
    pub fn grid_specs(&self) -> Result<Vec<RegularizerSpec>> {
        match &self.grid {
            Some(grid) if !grid.is_empty() => Ok(grid.clone()),
            _ => Err(Error::InvalidConfig(
                "the gridsearch command needs a non-empty `grid` section".to_string(),
            )),
        }
    }

    pub fn train_config(&self, regularizer: RegularizerSpec, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            max_epochs: self.train.max_epochs,
            batch_size: self.train.batch_size,
            early_stop_patience: self.train.early_stop_patience,
            clip_norm: self.train.clip_norm,
            dropout_keep_prob: self.train.dropout_keep_prob,
            regularizer,
            seed,
        }
    }

    /// The MNIST root after applying the environment fallback; `None`
    /// for synthetic datasets.
    pub fn resolved_data_root(&self) -> Result<Option<PathBuf>> {
        match &self.dataset {
            DatasetConfig::Mnist { root, .. } => match root {
                Some(path) => Ok(Some(path.clone())),
                None => match std::env::var_os(DATA_ROOT_ENV) {
                    Some(dir) => Ok(Some(PathBuf::from(dir))),
                    None => Err(Error::InvalidConfig(format!(
                        "mnist dataset needs `root` in the config or {DATA_ROOT_ENV} set"
                    ))),
                },
            },
            DatasetConfig::Synthetic { .. } => Ok(None),
        }
    }

    /// Loads the dataset this config describes, with splits applied.
    pub fn load_dataset(&self) -> Result<LabeledDataset> {
        match &self.dataset {
            DatasetConfig::Mnist { val_size, .. } => {
                let root = self
                    .resolved_data_root()?
                    .expect("mnist dataset always resolves a root");
                let mut ds = outreg::dataio::load_mnist(root)?;
                ds.split_train_val(*val_size)?;
                Ok(ds)
            }
            DatasetConfig::Synthetic {
                classes,
                per_class,
                dim,
                separation,
                seed,
                val_size,
                test_size,
            } => {
                let mut ds = outreg::dataio::synthetic_blobs(
                    *classes,
                    *per_class,
                    *dim,
                    *separation,
                    *seed,
                )?;
                ds.split_tail(*val_size, *test_size)?;
                Ok(ds)
            }
        }
    }
}

/// Short filesystem-safe tag describing a regularizer, used for grid
/// point directories.
pub fn spec_slug(spec: &RegularizerSpec) -> String {
    use outreg::RegularizerKind::*;
    match spec.kind {
        None => "none".to_string(),
        ConfidencePenalty => format!("confidence_penalty_beta{}", spec.beta),
        HingeConfidencePenalty => {
            format!("hinge_beta{}_gamma{}", spec.beta, spec.gamma)
        }
        UniformLabelSmoothing => format!("uniform_smoothing_eps{}", spec.epsilon),
        UnigramLabelSmoothing => format!("unigram_smoothing_eps{}", spec.epsilon),
        LabelNoise => format!("label_noise_eps{}", spec.epsilon),
    }
}
