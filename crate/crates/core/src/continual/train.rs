use std::sync::Arc;
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::batch::{assemble_extended_batch, draw_new, plan_batch, EpochSampler, ReplayRequest};
use super::config::{MemoryAccounting, Method, MethodConfig};
use super::ewc::{estimate_fisher, FisherState};
use crate::buffer::{buffer_construct, MemoryBuffer, Scorer};
use crate::data::{ExampleSet, ImageShape, TaskSequence};
use crate::error::{Error, Result};
use crate::filtering::{FilterConfig, NoFilter, ReplayFilter};
use crate::harness::metrics::{evaluate, AccuracyMatrix, CurvePoint, Predictor};
use crate::losses::{classification_loss, discriminator_objective, generator_objective, LossBreakdown};
use crate::nn::{AcGan, ClassMask, Classifier, FrozenCritic, FrozenGenerator, LatentBatch, ModelConfig};
use crate::rng::SeedTree;

/// Buffer images occupying the same bytes as `params` generator parameters.
pub fn memory_equiv_images(params: usize, shape: ImageShape, accounting: &MemoryAccounting) -> usize {
    if params == 0 {
        return 0;
    }
    let image_bytes = if shape.channels == 1 { accounting.gray_image_bytes } else { accounting.rgb_image_bytes };
    (params as f64 * accounting.bytes_per_parameter / image_bytes).round() as usize
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    AcGan(AcGan),
    Classifier(Classifier),
    Dgr { gan: AcGan, solver: Classifier },
}

impl TrainedModel {
    pub fn predictor(&self) -> &dyn Predictor {
        match self {
            TrainedModel::AcGan(m) => &m.critic,
            TrainedModel::Classifier(c) => c,
            TrainedModel::Dgr { solver, .. } => solver,
        }
    }

    pub fn acgan(&self) -> Option<&AcGan> {
        match self {
            TrainedModel::AcGan(m) | TrainedModel::Dgr { gan: m, .. } => Some(m),
            TrainedModel::Classifier(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarRow {
    pub task: usize,
    pub step: usize,
    pub d_total: f64,
    pub d_adversarial: f64,
    pub d_classification: f64,
    pub g_total: Option<f64>,
    pub g_adversarial: Option<f64>,
    pub g_classification: Option<f64>,
    pub penalty: Option<f64>,
    pub new: usize,
    pub generated: usize,
    pub memory: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterRate {
    pub task: usize,
    pub epoch: usize,
    pub generated: usize,
    pub kept: usize,
    pub rate: f64,
}

/// Generated images at the end of a task, for sample grids.
#[derive(Debug, Clone)]
pub struct TaskSamples {
    pub task: usize,
    pub images: Array2<f32>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub method: Method,
    pub accuracy: AccuracyMatrix,
    pub curve: Vec<CurvePoint>,
    pub scalars: Vec<ScalarRow>,
    pub filter_rates: Vec<FilterRate>,
    pub generator_snapshots: usize,
    pub solver_snapshots: usize,
    pub buffer: Option<MemoryBuffer>,
    pub buffer_capacity: usize,
    pub iterations: Vec<usize>,
    pub task_seconds: Vec<f64>,
    pub samples: Vec<TaskSamples>,
    pub model: TrainedModel,
}

fn iterations_for(cfg: &MethodConfig, examples: usize) -> usize {
    cfg.iterations_per_task.unwrap_or_else(|| ((cfg.epochs_per_task * examples as f64) / cfg.batch_size as f64).ceil().max(1.0) as usize)
}

fn union_train(seq: &TaskSequence, through: usize) -> ExampleSet {
    let first = &seq.tasks[0].train;
    let mut indices: Vec<usize> = seq.tasks[..through].iter().flat_map(|t| t.train.indices.iter().copied()).collect();
    indices.sort_unstable();
    ExampleSet { split: Arc::clone(&first.split), indices }
}

struct FilterTally {
    rows: Vec<FilterRate>,
}

impl FilterTally {
    fn add(&mut self, task: usize, epoch: usize, generated: usize, kept: usize) {
        if generated == 0 {
            return;
        }
        match self.rows.last_mut() {
            Some(r) if r.task == task && r.epoch == epoch => {
                r.generated += generated;
                r.kept += kept;
                r.rate = r.kept as f64 / r.generated as f64;
            }
            _ => self.rows.push(FilterRate { task, epoch, generated, kept, rate: kept as f64 / generated as f64 }),
        }
    }
}

fn scalar_row(task: usize, step: usize, d: &LossBreakdown<f32>, g: Option<&LossBreakdown<f32>>, penalty: Option<f64>, counts: (usize, usize, usize)) -> ScalarRow {
    ScalarRow {
        task,
        step,
        d_total: f64::from(d.total),
        d_adversarial: f64::from(d.l_ft),
        d_classification: f64::from(d.l_c),
        g_total: g.map(|g| f64::from(g.total)),
        g_adversarial: g.map(|g| f64::from(g.l_ft)),
        g_classification: g.map(|g| f64::from(g.l_c)),
        penalty,
        new: counts.0,
        generated: counts.1,
        memory: counts.2,
    }
}

fn conditional_samples(model: &AcGan, classes: &[usize], per_class: usize, task: usize, seeds: &SeedTree) -> Result<Option<TaskSamples>> {
    if per_class == 0 || !model.generator.is_conditional() {
        return Ok(None);
    }
    let labels: Vec<usize> = classes.iter().flat_map(|&c| std::iter::repeat_n(c, per_class)).collect();
    let draws = LatentBatch::with_labels(&mut seeds.rng_at("grid", task as u64), model.config.latent_dim, labels.clone());
    let mask = ClassMask::from_classes(model.config.num_classes, classes.iter().copied());
    Ok(Some(TaskSamples { task, images: model.generate(&draws, &mask)?, labels }))
}

/// Trains `cfg.method` over the task sequence.
pub fn train(seq: &TaskSequence, model_cfg: &ModelConfig, cfg: &MethodConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if model_cfg.image_shape != seq.shape {
        return Err(Error::config_at("model.image_shape", format!("model expects {:?} but the dataset has {:?}", model_cfg.image_shape, seq.shape)));
    }
    if model_cfg.num_classes < seq.num_classes {
        return Err(Error::config_at("model.num_classes", format!("{} class nodes for {} classes", model_cfg.num_classes, seq.num_classes)));
    }
    match cfg.method {
        Method::Fgd | Method::Ewc => train_classifier(seq, model_cfg, cfg, seed),
        Method::Dgr => train_dgr(seq, model_cfg, cfg, seed),
        _ => train_gan(seq, model_cfg, cfg, seed),
    }
}

/// Closed-loop replay. Never copies the generator.
pub fn train_clogan(seq: &TaskSequence, model_cfg: &ModelConfig, cfg: &MethodConfig, seed: u64) -> Result<TrainOutcome> {
    if cfg.method != Method::Clogan {
        return Err(Error::config_at("method", format!("train_clogan called with {}", cfg.method)));
    }
    let out = train(seq, model_cfg, cfg, seed)?;
    debug_assert_eq!(out.generator_snapshots, 0);
    Ok(out)
}

/// Every method other than CloGAN.
pub fn train_baseline(seq: &TaskSequence, model_cfg: &ModelConfig, cfg: &MethodConfig, seed: u64) -> Result<TrainOutcome> {
    if cfg.method == Method::Clogan {
        return Err(Error::config_at("method", "clogan is not a baseline"));
    }
    train(seq, model_cfg, cfg, seed)
}

fn buffer_capacity(seq: &TaskSequence, cfg: &MethodConfig, generator_params: usize) -> usize {
    match &cfg.buffer {
        Some(b) if cfg.method.uses_buffer() => {
            let extra = if b.add_generator_equivalent { memory_equiv_images(generator_params, seq.shape, &cfg.accounting) } else { 0 };
            b.size.resolve(seq.train_size) + extra
        }
        _ => 0,
    }
}

fn train_gan(seq: &TaskSequence, model_cfg: &ModelConfig, cfg: &MethodConfig, seed: u64) -> Result<TrainOutcome> {
    let seeds = SeedTree::new(seed);
    let method = cfg.method;
    let mut model = AcGan::build(model_cfg, seeds.seed("model"))?;
    let capacity = buffer_capacity(seq, cfg, model.generator_param_count());
    let buffer_cfg = cfg.buffer.clone();
    let mut buffer = (capacity > 0).then(|| MemoryBuffer::new(capacity, buffer_cfg.as_ref().map_or(5, |b| b.clusters_per_class), seq.shape));
    let mut filter: Box<dyn ReplayFilter> = if method == Method::Mergan { Box::new(NoFilter) } else { cfg.filter.build() };
    let mut frozen: Option<FrozenGenerator<f32>> = None;
    let mut generator_snapshots = 0;

    let mut data_rng = seeds.rng("data");
    let mut replay_rng = seeds.rng("replay");
    let mut latent_rng = seeds.rng("latent");
    let mut accuracy = AccuracyMatrix::new(seq.len());
    let mut curve = Vec::new();
    let mut scalars = Vec::new();
    let mut tally = FilterTally { rows: Vec::new() };
    let mut iterations = Vec::new();
    let mut task_seconds = Vec::new();
    let mut samples = Vec::new();

    for t in 1..=seq.len() {
        let started = Instant::now();
        let task = seq.task(t)?;
        if matches!(method, Method::Mt | Method::MtFull) && t > 1 {
            generator_snapshots += model.generator_snapshots();
            model = AcGan::build(model_cfg, seeds.seed_at("model", t as u64))?;
        }
        let old = seq.classes_through(t - 1);
        let active = seq.classes_through(t);
        let mask = ClassMask::from_classes(model_cfg.num_classes, active.iter().copied());
        let old_mask = ClassMask::from_classes(model_cfg.num_classes, old.iter().copied());

        // MT-full trains on everything seen so far and holds out a validation slice
        let (train_set, validation) = if method == Method::MtFull {
            let mut all = union_train(seq, t);
            all.indices.shuffle(&mut data_rng);
            let k = cfg.mt_full.validation_samples.min(all.len() / 10);
            let val = ExampleSet { split: Arc::clone(&all.split), indices: all.indices[..k].to_vec() };
            all.indices.drain(..k);
            (all, Some(val))
        } else {
            (task.train.clone(), None)
        };
        let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size).max(1);
        let n_iter = if method == Method::MtFull {
            (cfg.mt_full.max_epochs * steps_per_epoch as f64).ceil() as usize
        } else {
            iterations_for(cfg, train_set.len())
        };
        let has_gen = t > 1 && method.uses_generated_replay();
        let has_mem = t > 1 && buffer.as_ref().is_some_and(|b| !b.is_empty());
        if has_gen {
            filter.begin_task(&model, &old_mask, &mut replay_rng)?;
        }
        let mut sampler = EpochSampler::new(train_set.len());
        let (mut best_val, mut stale) = (f64::NEG_INFINITY, 0usize);
        let mut done = 0;
        for step in 0..n_iter {
            let plan = plan_batch(cfg.mixing, cfg.batch_size, t, cfg.memory_share, has_gen, has_mem);
            let new = draw_new(&train_set, &mut sampler, plan.new, &mut data_rng);
            let ext = {
                let source = match (&frozen, method) {
                    (Some(f), Method::CopyClogan | Method::Mergan) => f.generator(),
                    _ => &model.generator,
                };
                let mut req = ReplayRequest {
                    source,
                    judge: &model,
                    filter: filter.as_mut(),
                    buffer: buffer.as_ref(),
                    old_classes: &old,
                    plan,
                    lambda_mem: cfg.lambda_mem,
                    max_rounds: cfg.max_replenish_rounds,
                };
                assemble_extended_batch(new, &mut req, &mut replay_rng)?
            };
            tally.add(t, step / steps_per_epoch, ext.composition.generated_attempts, ext.composition.generated);
            let fake = LatentBatch::sample(&mut latent_rng, cfg.batch_size, model_cfg.latent_dim, &active);
            let batch = ext.to_objective(fake, cfg.replay_as_real);
            let (d, d_grads) = discriminator_objective(&model, &batch, &mask, &cfg.objective)?;
            model.step_critic(&d_grads);
            let draws = LatentBatch::sample(&mut latent_rng, cfg.batch_size, model_cfg.latent_dim, &active);
            let (g, g_grads) = generator_objective(&model, &draws, &mask, &cfg.objective)?;
            model.step_generator(&g_grads);
            done = step + 1;

            if cfg.log_every > 0 && step % cfg.log_every == 0 {
                let c = ext.composition;
                scalars.push(scalar_row(t, step, &d, Some(&g), None, (c.new, c.generated, c.memory)));
                log::debug!("task {t} step {step}/{n_iter}: D {:.4} G {:.4}", d.total, g.total);
            }
            if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 < n_iter {
                curve.push(CurvePoint { task: t, step: step + 1, average: evaluate(&model.critic, seq, t)?.average() });
            }
            if let Some(val) = &validation {
                if (step + 1) % steps_per_epoch == 0 {
                    let (x, y) = val.to_matrix();
                    let pred = model.critic.predict(&x, &mask);
                    let acc = pred.iter().zip(&y).filter(|(p, y)| p == y).count() as f64 / y.len().max(1) as f64;
                    if acc > best_val + 1e-3 {
                        best_val = acc;
                        stale = 0;
                    } else {
                        stale += 1;
                        if stale >= cfg.mt_full.patience {
                            log::info!("task {t}: validation plateau after {} epochs", (step + 1) / steps_per_epoch);
                            break;
                        }
                    }
                }
            }
        }
        iterations.push(done);
        let row = evaluate(&model.critic, seq, t)?;
        curve.push(CurvePoint { task: t, step: done, average: row.average() });
        log::info!("{method} task {t}/{}: average accuracy {:.4} after {done} steps", seq.len(), row.average());
        accuracy.push(row)?;

        if let Some(b) = buffer.take() {
            let scorer = Scorer { source: &model.critic, mask: &mask };
            let selector = buffer_cfg.as_ref().map(|b| b.selector).unwrap_or_default();
            buffer = Some(buffer_construct(&b, &task.train, selector, Some(&scorer), seeds.seed_at("buffer", t as u64))?);
        }
        if t < seq.len() && matches!(method, Method::CopyClogan | Method::Mergan) {
            frozen = Some(model.snapshot_generator());
        }
        if let Some(s) = conditional_samples(&model, &active, cfg.grid_per_class, t, &seeds)? {
            samples.push(s);
        }
        task_seconds.push(started.elapsed().as_secs_f64());
    }
    generator_snapshots += model.generator_snapshots();
    Ok(TrainOutcome {
        method,
        accuracy,
        curve,
        scalars,
        filter_rates: tally.rows,
        generator_snapshots,
        solver_snapshots: 0,
        buffer,
        buffer_capacity: capacity,
        iterations,
        task_seconds,
        samples,
        model: TrainedModel::AcGan(model),
    })
}

fn classifier_step(clf: &mut Classifier, x: &Array2<f32>, labels: &[usize], mask: &ClassMask, ewc: Option<&FisherState>) -> Result<(f32, Option<f64>)> {
    let trace = clf.critic.forward_trace(x);
    let logits = trace.output().logits.expect("class head");
    let (loss, d_logits) = classification_loss(logits.view(), labels, None, mask)?;
    let mut grads = clf.critic.zero_grads();
    clf.critic.backward(&trace, None, Some(&d_logits), Some(&mut grads), false);
    let penalty = ewc.map(|f| {
        let params = clf.critic.param_slices();
        f.add_gradient(&params, &mut grads);
        f.penalty(&params)
    });
    clf.step(&grads);
    Ok((loss, penalty))
}

fn train_classifier(seq: &TaskSequence, model_cfg: &ModelConfig, cfg: &MethodConfig, seed: u64) -> Result<TrainOutcome> {
    let seeds = SeedTree::new(seed);
    let mut clf = Classifier::build(model_cfg, cfg.classifier_optimizer, seeds.seed("model"))?;
    let mut fisher = match (cfg.method, cfg.ewc) {
        (Method::Ewc, Some(e)) => Some((FisherState::new(e.lambda_fisher, &clf.critic), e.fisher_samples)),
        _ => None,
    };
    let mut data_rng = seeds.rng("data");
    let mut accuracy = AccuracyMatrix::new(seq.len());
    let (mut curve, mut scalars, mut iterations, mut task_seconds) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for t in 1..=seq.len() {
        let started = Instant::now();
        let task = seq.task(t)?;
        let mask = ClassMask::from_classes(model_cfg.num_classes, seq.classes_through(t));
        let n_iter = iterations_for(cfg, task.train.len());
        let mut sampler = EpochSampler::new(task.train.len());
        // the penalty only applies from the second task on
        let ewc = if t > 1 { fisher.as_ref().map(|f| &f.0) } else { None };
        for step in 0..n_iter {
            let (x, labels) = draw_new(&task.train, &mut sampler, cfg.batch_size, &mut data_rng);
            let (loss, penalty) = classifier_step(&mut clf, &x, &labels, &mask, ewc)?;
            if cfg.log_every > 0 && step % cfg.log_every == 0 {
                let d = LossBreakdown { l_ft: 0.0, l_c: loss, total: loss, sample_weights: Vec::new(), class_terms: Vec::new() };
                scalars.push(scalar_row(t, step, &d, None, penalty, (labels.len(), 0, 0)));
            }
            if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 < n_iter {
                curve.push(CurvePoint { task: t, step: step + 1, average: evaluate(&clf, seq, t)?.average() });
            }
        }
        iterations.push(n_iter);
        let row = evaluate(&clf, seq, t)?;
        curve.push(CurvePoint { task: t, step: n_iter, average: row.average() });
        log::info!("{} task {t}/{}: average accuracy {:.4}", cfg.method, seq.len(), row.average());
        accuracy.push(row)?;
        if let Some((state, n)) = fisher.as_mut() {
            let mut positions: Vec<usize> = (0..task.train.len()).collect();
            positions.shuffle(&mut data_rng);
            positions.truncate(*n);
            let (x, labels) = task.train.gather(&positions);
            let estimate = estimate_fisher(&clf.critic, &x, &labels, &mask)?;
            state.consolidate(&clf.critic, &estimate);
        }
        task_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(TrainOutcome {
        method: cfg.method,
        accuracy,
        curve,
        scalars,
        filter_rates: Vec::new(),
        generator_snapshots: 0,
        solver_snapshots: clf.snapshots(),
        buffer: None,
        buffer_capacity: 0,
        iterations,
        task_seconds,
        samples: Vec::new(),
        model: TrainedModel::Classifier(clf),
    })
}

fn train_dgr(seq: &TaskSequence, model_cfg: &ModelConfig, cfg: &MethodConfig, seed: u64) -> Result<TrainOutcome> {
    let seeds = SeedTree::new(seed);
    let solver_cfg = cfg.solver.unwrap_or_default();
    let mut gan = AcGan::build_unconditional(model_cfg, seeds.seed("model"))?;
    let mut solver = Classifier::build(model_cfg, solver_cfg.optimizer, seeds.seed("solver"))?;
    let mut frozen: Option<(FrozenGenerator<f32>, FrozenCritic<f32>)> = None;
    let mut data_rng = seeds.rng("data");
    let mut replay_rng = seeds.rng("replay");
    let mut latent_rng = seeds.rng("latent");
    let mut accuracy = AccuracyMatrix::new(seq.len());
    let (mut curve, mut scalars, mut iterations, mut task_seconds, mut samples) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let all = ClassMask::all(model_cfg.num_classes);
    for t in 1..=seq.len() {
        let started = Instant::now();
        let task = seq.task(t)?;
        let active = seq.classes_through(t);
        let mask = ClassMask::from_classes(model_cfg.num_classes, active.iter().copied());
        let old_mask = ClassMask::from_classes(model_cfg.num_classes, seq.classes_through(t - 1));
        let n_iter = iterations_for(cfg, task.train.len());
        let mut sampler = EpochSampler::new(task.train.len());
        for step in 0..n_iter {
            let plan = plan_batch(cfg.mixing, cfg.batch_size, t, 0.0, frozen.is_some(), false);
            let (mut x, mut labels) = draw_new(&task.train, &mut sampler, plan.new, &mut data_rng);
            if let (Some((g, s)), true) = (&frozen, plan.generated > 0) {
                let draws = LatentBatch::sample(&mut replay_rng, plan.generated, model_cfg.latent_dim, &[]);
                let replay = g.generate(&draws, &all)?;
                labels.extend(s.critic().predict(&replay, &old_mask));
                x = concatenate(Axis(0), &[x.view(), replay.view()]).expect("same width");
            }
            let n = labels.len();
            let batch = crate::losses::ObjectiveBatch {
                real: x.clone(),
                real_labels: labels.clone(),
                real_weights: vec![1.0; n],
                adversarial_rows: vec![true; n],
                fake: LatentBatch::sample(&mut latent_rng, cfg.batch_size, model_cfg.latent_dim, &[]),
            };
            let (d, d_grads) = discriminator_objective(&gan, &batch, &all, &cfg.objective)?;
            gan.step_critic(&d_grads);
            let draws = LatentBatch::sample(&mut latent_rng, cfg.batch_size, model_cfg.latent_dim, &[]);
            let (g, g_grads) = generator_objective(&gan, &draws, &all, &cfg.objective)?;
            gan.step_generator(&g_grads);
            let (solver_loss, _) = classifier_step(&mut solver, &x, &labels, &mask, None)?;
            if cfg.log_every > 0 && step % cfg.log_every == 0 {
                let mut d = d.clone();
                d.l_c = solver_loss;
                scalars.push(scalar_row(t, step, &d, Some(&g), None, (plan.new, n - plan.new, 0)));
            }
            if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 < n_iter {
                curve.push(CurvePoint { task: t, step: step + 1, average: evaluate(&solver, seq, t)?.average() });
            }
        }
        iterations.push(n_iter);
        let row = evaluate(&solver, seq, t)?;
        curve.push(CurvePoint { task: t, step: n_iter, average: row.average() });
        log::info!("dgr task {t}/{}: average accuracy {:.4}", seq.len(), row.average());
        accuracy.push(row)?;
        if cfg.grid_per_class > 0 {
            let draws = LatentBatch::sample(&mut seeds.rng_at("grid", t as u64), cfg.grid_per_class * active.len(), model_cfg.latent_dim, &[]);
            let images = gan.generate(&draws, &all)?;
            let labels = solver.critic.predict(&images, &mask);
            samples.push(TaskSamples { task: t, images, labels });
        }
        if t < seq.len() {
            frozen = Some((gan.snapshot_generator(), solver.snapshot()));
        }
        task_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(TrainOutcome {
        method: Method::Dgr,
        accuracy,
        curve,
        scalars,
        filter_rates: Vec::new(),
        generator_snapshots: gan.generator_snapshots(),
        solver_snapshots: solver.snapshots(),
        buffer: None,
        buffer_capacity: 0,
        iterations,
        task_seconds,
        samples,
        model: TrainedModel::Dgr { gan, solver },
    })
}

/// Filter configuration actually used by a method.
pub fn effective_filter(cfg: &MethodConfig) -> FilterConfig {
    match cfg.method {
        Method::Mergan | Method::Dgr => FilterConfig::None,
        _ => cfg.filter.clone(),
    }
}
