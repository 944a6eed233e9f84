//! Self-describing model checkpoints: architecture config, seed, parameter
//! tensors and optimizer moments in one [`Archive`].

use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::models::{AcGan, Classifier, ModelConfig};
use super::optim::AdamConfig;
use super::network::Gradients;
use super::optim::Adam;
use crate::archive::Archive;
use crate::error::{Error, Result};

pub const CHECKPOINT_KIND: &str = "clogan.acgan";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CLASSIFIER_KIND: &str = "clogan.classifier";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    version: u32,
    model: ModelConfig,
    seed: u64,
    conditional: bool,
    generator_adam_step: u64,
    critic_adam_step: u64,
    /// Free-form provenance (run seeds, task index...).
    #[serde(default)]
    extra: serde_json::Value,
}

fn push_tensors(archive: &mut Archive, prefix: &str, tensors: &[&[f32]]) {
    for (i, t) in tensors.iter().enumerate() {
        archive.push_f32(format!("{prefix}/{i}"), vec![t.len()], t.to_vec());
    }
}

fn push_adam(archive: &mut Archive, prefix: &str, adam: &Adam<f32>) {
    let m: Vec<&[f32]> = adam.first_moment.iter().map(|a| a.as_slice().expect("contiguous")).collect();
    let v: Vec<&[f32]> = adam.second_moment.iter().map(|a| a.as_slice().expect("contiguous")).collect();
    push_tensors(archive, &format!("{prefix}/m"), &m);
    push_tensors(archive, &format!("{prefix}/v"), &v);
}

fn restore(archive: &Archive, prefix: &str, targets: Vec<&mut [f32]>) -> Result<()> {
    for (i, t) in targets.into_iter().enumerate() {
        let name = format!("{prefix}/{i}");
        let src = archive.f32(&name)?;
        if src.len() != t.len() {
            return Err(Error::Serde(format!("tensor `{name}` has {} values, model expects {}", src.len(), t.len())));
        }
        t.copy_from_slice(src);
    }
    Ok(())
}

fn restore_adam(archive: &Archive, prefix: &str, adam: &mut Adam<f32>, step: u64) -> Result<()> {
    adam.step = step;
    let m = adam.first_moment.iter_mut().map(|a: &mut Array1<f32>| a.as_slice_mut().expect("contiguous")).collect();
    restore(archive, &format!("{prefix}/m"), m)?;
    let v = adam.second_moment.iter_mut().map(|a| a.as_slice_mut().expect("contiguous")).collect();
    restore(archive, &format!("{prefix}/v"), v)
}

pub fn to_archive(model: &AcGan<f32>, extra: serde_json::Value) -> Result<Archive> {
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        model: model.config.clone(),
        seed: model.seed,
        conditional: model.generator.is_conditional(),
        generator_adam_step: model.generator_opt.step,
        critic_adam_step: model.critic_opt.step,
        extra,
    };
    let mut archive = Archive::new(CHECKPOINT_KIND, serde_json::to_value(&meta)?);
    push_tensors(&mut archive, "generator", &model.generator.net.param_slices());
    push_tensors(&mut archive, "critic", &model.critic.param_slices());
    push_adam(&mut archive, "generator_opt", &model.generator_opt);
    push_adam(&mut archive, "critic_opt", &model.critic_opt);
    Ok(archive)
}

pub fn from_archive(archive: &Archive) -> Result<AcGan<f32>> {
    if archive.kind != CHECKPOINT_KIND {
        return Err(Error::Serde(format!("expected a `{CHECKPOINT_KIND}` archive, found `{}`", archive.kind)));
    }
    let meta: CheckpointMeta = serde_json::from_value(archive.meta.clone())?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::Serde(format!("unsupported checkpoint version {}", meta.version)));
    }
    let mut model = AcGan::<f32>::build_variant(&meta.model, meta.seed, meta.conditional)?;
    restore(archive, "generator", model.generator.net.param_slices_mut())?;
    restore(archive, "critic", model.critic.param_slices_mut())?;
    restore_adam(archive, "generator_opt", &mut model.generator_opt, meta.generator_adam_step)?;
    restore_adam(archive, "critic_opt", &mut model.critic_opt, meta.critic_adam_step)?;
    Ok(model)
}

pub fn save(model: &AcGan<f32>, extra: serde_json::Value, path: &Path) -> Result<()> {
    to_archive(model, extra)?.save(path)
}

pub fn load(path: &Path) -> Result<AcGan<f32>> {
    from_archive(&Archive::load(path)?).map_err(|e| match e {
        Error::Serde(m) => Error::ingestion(path, m),
        other => other,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifierMeta {
    version: u32,
    model: ModelConfig,
    optimizer: AdamConfig,
    adam_step: u64,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Classifier parameters and optimizer moments. The model config is needed
/// to rebuild the architecture on load.
pub fn save_classifier(clf: &Classifier<f32>, model: &ModelConfig, extra: serde_json::Value, path: &Path) -> Result<()> {
    let meta = ClassifierMeta { version: CHECKPOINT_VERSION, model: model.clone(), optimizer: clf.opt.config, adam_step: clf.opt.step, extra };
    let mut archive = Archive::new(CLASSIFIER_KIND, serde_json::to_value(&meta)?);
    push_tensors(&mut archive, "critic", &clf.critic.param_slices());
    push_adam(&mut archive, "opt", &clf.opt);
    archive.save(path)
}

pub fn load_classifier(path: &Path) -> Result<(Classifier<f32>, ModelConfig)> {
    let archive = Archive::load(path)?;
    let wrap = |e: Error| match e {
        Error::Serde(m) => Error::ingestion(path, m),
        other => other,
    };
    if archive.kind != CLASSIFIER_KIND {
        return Err(Error::ingestion(path, format!("expected a `{CLASSIFIER_KIND}` archive, found `{}`", archive.kind)));
    }
    let meta: ClassifierMeta = serde_json::from_value(archive.meta.clone()).map_err(|e| wrap(e.into()))?;
    let mut clf = Classifier::build(&meta.model, meta.optimizer, 0)?;
    restore(&archive, "critic", clf.critic.param_slices_mut()).map_err(wrap)?;
    restore_adam(&archive, "opt", &mut clf.opt, meta.adam_step).map_err(wrap)?;
    Ok((clf, meta.model))
}

/// Parameter vector of a model flattened in checkpoint order; handy for
/// equality checks.
pub fn flat_params(model: &AcGan<f32>) -> Vec<f32> {
    let g = Gradients { tensors: model.generator.net.param_slices().iter().chain(model.critic.param_slices().iter()).map(|s| Array1::from(s.to_vec())).collect() };
    g.flat()
}
