//! Versioned experiment configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::continual::MethodConfig;
use crate::data::synthetic::{prototypes, SyntheticSpec};
use crate::data::{load_dataset, make_task_sequence, ClassOrder, Dataset, DatasetName, ExampleSet, ImageShape, TaskSequence};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Architecture, ModelConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: DatasetName,
    /// Overrides `$CLOGAN_DATA_ROOT`.
    #[serde(default)]
    pub root: Option<PathBuf>,
    #[serde(default = "DatasetConfig::default_per_task")]
    pub classes_per_task: usize,
    #[serde(default = "DatasetConfig::default_order")]
    pub class_order: ClassOrder,
    /// Keep only the first N training images of each class.
    #[serde(default)]
    pub train_per_class: Option<usize>,
    /// Keep only the first N eval images of each class.
    #[serde(default)]
    pub eval_per_class: Option<usize>,
    /// Size of the procedural dataset when `name = "synthetic"`.
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
}

impl DatasetConfig {
    fn default_per_task() -> usize {
        2
    }

    fn default_order() -> ClassOrder {
        ClassOrder::Identity
    }

    pub fn new(name: DatasetName) -> Self {
        Self { name, root: None, classes_per_task: 2, class_order: ClassOrder::Identity, train_per_class: None, eval_per_class: None, synthetic: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub num_classes: usize,
    pub side: usize,
    pub train_per_class: usize,
    pub eval_per_class: usize,
    #[serde(default)]
    pub seed: u64,
}

/// The model minus what the dataset determines (image shape, class count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "ModelSection::default_latent")]
    pub latent_dim: usize,
    #[serde(default = "Architecture::mlp_default")]
    pub arch: Architecture,
    #[serde(default = "AdamConfig::gan")]
    pub generator_optimizer: AdamConfig,
    #[serde(default = "AdamConfig::gan")]
    pub critic_optimizer: AdamConfig,
}

impl ModelSection {
    fn default_latent() -> usize {
        100
    }

    pub fn resolve(&self, shape: ImageShape, num_classes: usize) -> ModelConfig {
        ModelConfig {
            image_shape: shape,
            latent_dim: self.latent_dim,
            num_classes,
            arch: self.arch.clone(),
            generator_optimizer: self.generator_optimizer,
            critic_optimizer: self.critic_optimizer,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { latent_dim: 100, arch: Architecture::mlp_default(), generator_optimizer: AdamConfig::gan(), critic_optimizer: AdamConfig::gan() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelSection,
    pub method: MethodConfig,
    #[serde(default = "ExperimentConfig::default_seeds")]
    pub seeds: Vec<u64>,
    /// Write model and buffer checkpoints into the run record.
    #[serde(default = "ExperimentConfig::default_true")]
    pub checkpoints: bool,
}

impl ExperimentConfig {
    fn default_seeds() -> Vec<u64> {
        vec![0]
    }

    fn default_true() -> bool {
        true
    }

    pub fn new(name: impl Into<String>, dataset: DatasetConfig, method: MethodConfig) -> Self {
        Self { schema_version: SCHEMA_VERSION, name: name.into(), dataset, model: ModelSection::default(), method, seeds: vec![0], checkpoints: true }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config(e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.message().to_string();
            if path == "." { Error::config(message) } else { Error::config_at(path, message) }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config_at("schema_version", format!("unsupported version {} (this build reads {SCHEMA_VERSION})", self.schema_version)));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config_at("name", "must be a non-empty file name"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config_at("seeds", "at least one seed is required"));
        }
        if self.dataset.name == DatasetName::Synthetic && self.dataset.synthetic.is_none() {
            return Err(Error::config_at("dataset.synthetic", "the synthetic dataset needs a size section"));
        }
        self.method.validate()
    }

    pub fn data_root(&self) -> PathBuf {
        self.dataset.root.clone().unwrap_or_else(crate::data::default_root)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match (&self.dataset.name, &self.dataset.synthetic) {
            (DatasetName::Synthetic, Some(s)) => Ok(prototypes(SyntheticSpec {
                shape: ImageShape::new(s.side, s.side, 1),
                num_classes: s.num_classes,
                train_per_class: s.train_per_class,
                eval_per_class: s.eval_per_class,
                seed: s.seed,
                ..Default::default()
            })),
            (name, _) => load_dataset(*name, &self.data_root()),
        }
    }

    /// Loads the dataset and splits it into tasks, applying the per-class caps.
    pub fn task_sequence(&self) -> Result<(TaskSequence, ModelConfig)> {
        let dataset = self.load_dataset()?;
        let mut seq = make_task_sequence(&dataset, self.dataset.classes_per_task, &self.dataset.class_order)?;
        for task in &mut seq.tasks {
            if let Some(n) = self.dataset.train_per_class {
                task.train = first_per_class(&task.train, n);
            }
            if let Some(n) = self.dataset.eval_per_class {
                task.eval = first_per_class(&task.eval, n);
            }
        }
        let model = self.model.resolve(seq.shape, seq.num_classes);
        Ok((seq, model))
    }
}

fn first_per_class(set: &ExampleSet, n: usize) -> ExampleSet {
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let indices = set
        .indices
        .iter()
        .copied()
        .filter(|&i| {
            let c = seen.entry(set.split.labels[i]).or_default();
            *c += 1;
            *c <= n
        })
        .collect();
    ExampleSet { split: Arc::clone(&set.split), indices }
}
