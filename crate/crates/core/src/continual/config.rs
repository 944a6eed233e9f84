use serde::{Deserialize, Serialize};

use crate::buffer::{BufferSize, Selector};
use crate::error::{Error, Result};
use crate::filtering::FilterConfig;
use crate::losses::ObjectiveSettings;
use crate::nn::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Closed-loop replay from the current generator plus the buffer.
    Clogan,
    /// CloGAN without generated replay: old classes come from the buffer only.
    FrozenClogan,
    /// Re-initialised at every task; trained on the new task plus the buffer.
    Mt,
    /// Re-initialised at every task; trained on the full data of every task so far.
    MtFull,
    /// Plain fine-tuning of a classifier on each new task.
    Fgd,
    /// Fine-tuning with an elastic weight consolidation penalty.
    Ewc,
    /// Unconditional GAN plus solver, replaying from copies of both.
    Dgr,
    /// AC-GAN replaying every old class from a copy of its generator.
    Mergan,
    /// CloGAN whose generated replay comes from a per-task generator copy.
    CopyClogan,
}

impl Method {
    pub const ALL: [Method; 9] =
        [Method::Clogan, Method::FrozenClogan, Method::Mt, Method::MtFull, Method::Fgd, Method::Ewc, Method::Dgr, Method::Mergan, Method::CopyClogan];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Clogan => "clogan",
            Method::FrozenClogan => "frozen_clogan",
            Method::Mt => "mt",
            Method::MtFull => "mt_full",
            Method::Fgd => "fgd",
            Method::Ewc => "ewc",
            Method::Dgr => "dgr",
            Method::Mergan => "mergan",
            Method::CopyClogan => "copy_clogan",
        }
    }

    pub fn uses_buffer(self) -> bool {
        matches!(self, Method::Clogan | Method::FrozenClogan | Method::Mt | Method::CopyClogan)
    }

    pub fn uses_generated_replay(self) -> bool {
        matches!(self, Method::Clogan | Method::Dgr | Method::Mergan | Method::CopyClogan)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::config_at("method", format!("unknown method `{s}`")))
    }
}

/// How a mini-batch is split between new-task data and replay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mixing {
    /// `batch / t` new samples at task `t`, the rest replay: every task's
    /// classes get about the same share.
    Proportional,
    /// A fixed fraction of new samples.
    NewFraction { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferConfig {
    pub size: BufferSize,
    #[serde(default)]
    pub selector: Selector,
    #[serde(default = "BufferConfig::default_clusters")]
    pub clusters_per_class: usize,
    /// Add the generator's memory equivalent in images on top of `size`.
    #[serde(default)]
    pub add_generator_equivalent: bool,
}

impl BufferConfig {
    fn default_clusters() -> usize {
        5
    }

    pub fn percent(p: f64) -> Self {
        Self { size: BufferSize::Percent(p), selector: Selector::ClassKcenter, clusters_per_class: 5, add_generator_equivalent: false }
    }
}

/// Byte sizes used to convert generator parameters into buffer images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryAccounting {
    pub bytes_per_parameter: f64,
    pub gray_image_bytes: f64,
    pub rgb_image_bytes: f64,
}

impl Default for MemoryAccounting {
    /// Calibrated so a 1.6M-parameter generator equals 6226 gray or 2572
    /// RGB images.
    fn default() -> Self {
        Self { bytes_per_parameter: 4.0, gray_image_bytes: 1028.0, rgb_image_bytes: 2488.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EwcConfig {
    pub lambda_fisher: f64,
    #[serde(default = "EwcConfig::default_samples")]
    pub fisher_samples: usize,
}

impl EwcConfig {
    fn default_samples() -> usize {
        1000
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "AdamConfig::classifier")]
    pub optimizer: AdamConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { optimizer: AdamConfig::classifier() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauConfig {
    pub max_epochs: f64,
    pub patience: usize,
    pub validation_samples: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { max_epochs: 10.0, patience: 2, validation_samples: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Method,
    #[serde(default)]
    pub buffer: Option<BufferConfig>,
    #[serde(default = "MethodConfig::default_lambda_mem")]
    pub lambda_mem: f64,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default = "MethodConfig::default_epochs")]
    pub epochs_per_task: f64,
    /// Overrides the epoch-derived iteration count when set.
    #[serde(default)]
    pub iterations_per_task: Option<usize>,
    #[serde(default = "MethodConfig::default_batch")]
    pub batch_size: usize,
    #[serde(default = "MethodConfig::default_mixing")]
    pub mixing: Mixing,
    /// Share of the replay slots given to buffer samples when both sources exist.
    #[serde(default = "MethodConfig::default_memory_share")]
    pub memory_share: f64,
    /// Whether generated replay also enters the adversarial "real" term.
    #[serde(default = "MethodConfig::default_true")]
    pub replay_as_real: bool,
    #[serde(default = "MethodConfig::default_rounds")]
    pub max_replenish_rounds: usize,
    #[serde(default)]
    pub objective: ObjectiveSettings,
    #[serde(default)]
    pub ewc: Option<EwcConfig>,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default = "AdamConfig::classifier")]
    pub classifier_optimizer: AdamConfig,
    #[serde(default)]
    pub mt_full: PlateauConfig,
    /// Evaluate the running average every this many steps (0: task ends only).
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "MethodConfig::default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub accounting: MemoryAccounting,
    /// Images per class in the per-task sample grids (0 disables them).
    #[serde(default = "MethodConfig::default_grid")]
    pub grid_per_class: usize,
}

impl MethodConfig {
    fn default_lambda_mem() -> f64 {
        1.0
    }

    fn default_epochs() -> f64 {
        2.0
    }

    fn default_batch() -> usize {
        64
    }

    fn default_mixing() -> Mixing {
        Mixing::Proportional
    }

    fn default_memory_share() -> f64 {
        0.5
    }

    fn default_true() -> bool {
        true
    }

    fn default_rounds() -> usize {
        10
    }

    fn default_log_every() -> usize {
        50
    }

    fn default_grid() -> usize {
        8
    }

    pub fn new(method: Method) -> Self {
        Self {
            method,
            buffer: None,
            lambda_mem: 1.0,
            filter: FilterConfig::default(),
            epochs_per_task: 2.0,
            iterations_per_task: None,
            batch_size: 64,
            mixing: Mixing::Proportional,
            memory_share: 0.5,
            replay_as_real: true,
            max_replenish_rounds: 10,
            objective: ObjectiveSettings::default(),
            ewc: None,
            solver: None,
            classifier_optimizer: AdamConfig::classifier(),
            mt_full: PlateauConfig::default(),
            eval_every: 0,
            log_every: 50,
            accounting: MemoryAccounting::default(),
            grid_per_class: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config_at("method.batch_size", "must be positive"));
        }
        if !(self.epochs_per_task > 0.0) && self.iterations_per_task.is_none() {
            return Err(Error::config_at("method.epochs_per_task", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.memory_share) {
            return Err(Error::config_at("method.memory_share", "must lie in [0, 1]"));
        }
        if let Mixing::NewFraction { fraction } = self.mixing {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::config_at("method.mixing.fraction", "must lie in (0, 1]"));
            }
        }
        if self.lambda_mem < 0.0 {
            return Err(Error::config_at("method.lambda_mem", "must be non-negative"));
        }
        match self.method {
            Method::Ewc => match self.ewc {
                None => return Err(Error::config_at("method.ewc", "ewc requires lambda_fisher")),
                Some(e) if e.lambda_fisher < 0.0 || e.fisher_samples == 0 => {
                    return Err(Error::config_at("method.ewc", "lambda_fisher must be non-negative and fisher_samples positive"));
                }
                _ => {}
            },
            Method::Dgr if self.solver.is_none() => return Err(Error::config_at("method.solver", "dgr requires a solver section")),
            Method::Mt | Method::FrozenClogan if self.buffer.is_none() => {
                return Err(Error::config_at("method.buffer", format!("{} trains from the buffer and needs one", self.method)));
            }
            _ => {}
        }
        if let Some(b) = &self.buffer {
            if !self.method.uses_buffer() {
                return Err(Error::config_at("method.buffer", format!("{} does not use a buffer", self.method)));
            }
            if b.clusters_per_class == 0 {
                return Err(Error::config_at("method.buffer.clusters_per_class", "must be positive"));
            }
            if let BufferSize::Percent(p) = b.size {
                if !(0.0..=100.0).contains(&p) {
                    return Err(Error::config_at("method.buffer.size", "percent must lie in [0, 100]"));
                }
            }
        }
        Ok(())
    }
}
