//! Mini-batch sources and the extended batch: new data, filtered generated
//! replay and weighted buffer samples.

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::Mixing;
use crate::buffer::{sample_memory, MemoryBuffer};
use crate::data::ExampleSet;
use crate::error::{Error, Result};
use crate::filtering::ReplayFilter;
use crate::losses::ObjectiveBatch;
use crate::nn::{AcGan, ClassMask, Generator, LatentBatch};
use crate::rng::Rng;

/// Walks a set in shuffled epochs.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    order: Vec<usize>,
    cursor: usize,
    pub epochs_started: usize,
}

impl EpochSampler {
    pub fn new(len: usize) -> Self {
        Self { order: (0..len).collect(), cursor: len, epochs_started: 0 }
    }

    /// Next `n` positions; reshuffles whenever an epoch runs out.
    pub fn next(&mut self, n: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        if self.order.is_empty() {
            return out;
        }
        while out.len() < n {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
                self.epochs_started += 1;
            }
            let take = (n - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}

/// Slot counts for one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub new: usize,
    pub generated: usize,
    pub memory: usize,
}

impl BatchPlan {
    pub fn total(&self) -> usize {
        self.new + self.generated + self.memory
    }
}

/// Splits `batch_size` at task `t` (1-based). Replay slots go to generated
/// samples and buffer samples by `memory_share` when both are available.
pub fn plan_batch(mixing: Mixing, batch_size: usize, t: usize, memory_share: f64, has_generated: bool, has_memory: bool) -> BatchPlan {
    if t <= 1 || (!has_generated && !has_memory) {
        return BatchPlan { new: batch_size, generated: 0, memory: 0 };
    }
    let new = match mixing {
        Mixing::Proportional => (batch_size as f64 / t as f64).round() as usize,
        Mixing::NewFraction { fraction } => (batch_size as f64 * fraction).round() as usize,
    }
    .clamp(1, batch_size);
    let replay = batch_size - new;
    let memory = match (has_generated, has_memory) {
        (true, true) => (replay as f64 * memory_share).round() as usize,
        (false, true) => replay,
        _ => 0,
    };
    BatchPlan { new, generated: replay - memory, memory }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Composition {
    pub new: usize,
    pub generated: usize,
    pub memory: usize,
    /// Generated samples produced, including rejected ones.
    pub generated_attempts: usize,
    pub rounds: usize,
    /// Generated slots left empty after the last round.
    pub shortfall: usize,
}

#[derive(Debug, Clone)]
pub struct ExtendedBatch {
    pub real_new: Array2<f32>,
    pub new_labels: Vec<usize>,
    pub replay_gen: Array2<f32>,
    pub gen_labels: Vec<usize>,
    pub replay_mem: Array2<f32>,
    pub mem_labels: Vec<usize>,
    pub lambda_mem: f32,
    pub composition: Composition,
}

impl ExtendedBatch {
    pub fn len(&self) -> usize {
        self.new_labels.len() + self.gen_labels.len() + self.mem_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The "real" side of the discriminator objective: new data with weight
    /// 1, generated replay with weight 1 (in the adversarial term only when
    /// `replay_as_real`), buffer samples with weight λ_mem.
    pub fn to_objective(&self, fake: LatentBatch<f32>, replay_as_real: bool) -> ObjectiveBatch<f32> {
        let real = concatenate(Axis(0), &[self.real_new.view(), self.replay_gen.view(), self.replay_mem.view()]).expect("same width");
        let (n, g, m) = (self.new_labels.len(), self.gen_labels.len(), self.mem_labels.len());
        let real_labels = self.new_labels.iter().chain(&self.gen_labels).chain(&self.mem_labels).copied().collect();
        let real_weights = std::iter::repeat_n(1.0, n + g).chain(std::iter::repeat_n(self.lambda_mem, m)).collect();
        let adversarial_rows = std::iter::repeat_n(true, n).chain(std::iter::repeat_n(replay_as_real, g)).chain(std::iter::repeat_n(true, m)).collect();
        ObjectiveBatch { real, real_labels, real_weights, adversarial_rows, fake }
    }
}

/// Inputs for one extended batch beyond the new-task slice.
pub struct ReplayRequest<'a> {
    /// Generator to replay from (the current one for CloGAN, a copy otherwise).
    pub source: &'a Generator<f32>,
    /// Model whose heads the filter consults.
    pub judge: &'a AcGan<f32>,
    pub filter: &'a mut dyn ReplayFilter,
    pub buffer: Option<&'a MemoryBuffer>,
    pub old_classes: &'a [usize],
    pub plan: BatchPlan,
    pub lambda_mem: f64,
    pub max_rounds: usize,
}

/// Generates `n` replay samples conditioned uniformly on the old classes,
/// regenerating whatever the filter rejects for up to `max_rounds` rounds.
pub fn replenish(req: &mut ReplayRequest<'_>, n: usize, rng: &mut Rng) -> Result<(Array2<f32>, Vec<usize>, Composition)> {
    let dim = req.source.image_shape.len();
    let mut comp = Composition::default();
    if n == 0 {
        return Ok((Array2::zeros((0, dim)), Vec::new(), comp));
    }
    if req.old_classes.is_empty() {
        return Err(Error::contract("generated replay requested with no old classes"));
    }
    let capacity = req.judge.config.num_classes;
    let old_mask = ClassMask::from_classes(capacity, req.old_classes.iter().copied());
    let mut rows: Vec<Array2<f32>> = Vec::new();
    let mut labels = Vec::with_capacity(n);
    while labels.len() < n && comp.rounds < req.max_rounds.max(1) {
        comp.rounds += 1;
        let want = n - labels.len();
        let draw_labels: Vec<usize> = (0..want).map(|_| req.old_classes[rng.random_range(0..req.old_classes.len())]).collect();
        let draws = LatentBatch::with_labels(rng, req.source.latent_dim, draw_labels);
        let images = req.source.generate(&draws, &old_mask)?;
        comp.generated_attempts += want;
        let report = req.filter.filter(req.judge, &images, &draws.labels, &old_mask, rng)?;
        if report.kept.iter().any(|&i| i >= want) {
            return Err(Error::contract("filter returned an index outside the batch"));
        }
        rows.push(images.select(Axis(0), &report.kept));
        labels.extend(report.kept.iter().map(|&i| draws.labels[i]));
    }
    comp.shortfall = n - labels.len();
    if comp.shortfall > 0 {
        log::warn!("replay replenishment stopped after {} rounds, {} of {n} slots empty", comp.rounds, comp.shortfall);
    }
    comp.generated = labels.len();
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let images = if views.is_empty() { Array2::zeros((0, dim)) } else { concatenate(Axis(0), &views).expect("same width") };
    Ok((images, labels, comp))
}

/// Builds one extended batch from already-drawn new-task rows.
pub fn assemble_extended_batch(new: (Array2<f32>, Vec<usize>), req: &mut ReplayRequest<'_>, rng: &mut Rng) -> Result<ExtendedBatch> {
    let (real_new, new_labels) = new;
    let (replay_gen, gen_labels, mut composition) = replenish(req, req.plan.generated, rng)?;
    let dim = real_new.ncols();
    let (replay_mem, mem_labels) = match (req.buffer, req.plan.memory) {
        (_, 0) | (None, _) => (Array2::zeros((0, dim)), Vec::new()),
        (Some(b), m) if !b.is_empty() => sample_memory(b, m, rng)?,
        _ => (Array2::zeros((0, dim)), Vec::new()),
    };
    composition.new = new_labels.len();
    composition.memory = mem_labels.len();
    Ok(ExtendedBatch { real_new, new_labels, replay_gen, gen_labels, replay_mem, mem_labels, lambda_mem: req.lambda_mem as f32, composition })
}

/// New-task rows for one step.
pub fn draw_new(set: &ExampleSet, sampler: &mut EpochSampler, n: usize, rng: &mut Rng) -> (Array2<f32>, Vec<usize>) {
    let positions = sampler.next(n, rng);
    set.gather(&positions)
}
