//! Run records: everything one seeded run produced, on disk.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::grid::save_grid;
use super::metrics::{max_average_per_task, AccuracyMatrix, CurvePoint};
use crate::continual::{memory_equiv_images, train, FilterRate, Method, TrainOutcome, TrainedModel};
use crate::data::{DatasetName, ImageShape};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, ModelConfig};

pub const RECORD_FILE: &str = "record.json";

/// Storage used by a run, in bytes unless noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub buffer_capacity: usize,
    pub buffer_images: usize,
    pub buffer_bytes: usize,
    pub generator_params: usize,
    pub generator_bytes: f64,
    /// Buffer images the generator's bytes would buy.
    pub generator_equiv_images: usize,
    pub generator_snapshots: usize,
    pub solver_snapshots: usize,
    pub snapshot_bytes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub method: Method,
    pub dataset: DatasetName,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub accuracy: AccuracyMatrix,
    pub curve: Vec<CurvePoint>,
    pub max_average: Vec<Option<f64>>,
    pub iterations: Vec<usize>,
    pub filter_rates: Vec<FilterRate>,
    pub memory: MemoryReport,
    pub wall_clock_seconds: Vec<f64>,
    /// Directory holding the record; artifact paths are relative to it.
    #[serde(skip)]
    pub dir: PathBuf,
    pub artifacts: Vec<String>,
}

impl RunRecord {
    pub fn final_average(&self) -> f64 {
        self.accuracy.final_average().unwrap_or(0.0)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = if dir.is_file() { dir.to_path_buf() } else { dir.join(RECORD_FILE) };
        let text = fs::read_to_string(&path).map_err(|e| Error::ingestion(&path, e.to_string()))?;
        let mut record: RunRecord = serde_json::from_str(&text).map_err(|e| Error::ingestion(&path, e.to_string()))?;
        record.dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(record)
    }
}

fn memory_report(outcome: &TrainOutcome, shape: ImageShape, cfg: &ExperimentConfig) -> MemoryReport {
    let acc = &cfg.method.accounting;
    let generator_params = outcome.model.acgan().map_or(0, |m| m.generator_param_count());
    let solver_params = match &outcome.model {
        TrainedModel::Dgr { solver, .. } => solver.critic.param_count(),
        _ => 0,
    };
    let generator_bytes = generator_params as f64 * acc.bytes_per_parameter;
    let snapshot_bytes = outcome.generator_snapshots as f64 * generator_bytes + outcome.solver_snapshots as f64 * solver_params as f64 * acc.bytes_per_parameter;
    MemoryReport {
        buffer_capacity: outcome.buffer_capacity,
        buffer_images: outcome.buffer.as_ref().map_or(0, |b| b.len()),
        buffer_bytes: outcome.buffer.as_ref().map_or(0, |b| b.stored_bytes()),
        generator_params,
        generator_bytes,
        generator_equiv_images: memory_equiv_images(generator_params, shape, acc),
        generator_snapshots: outcome.generator_snapshots,
        solver_snapshots: outcome.solver_snapshots,
        snapshot_bytes,
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct AccuracyCell {
    after_task: usize,
    task: usize,
    correct: usize,
    total: usize,
    accuracy: f64,
}

#[derive(Serialize)]
struct AverageRow {
    after_task: usize,
    average: f64,
    max_average: Option<f64>,
}

pub fn write_accuracy_csv(accuracy: &AccuracyMatrix, max_average: &[Option<f64>], dir: &Path) -> Result<()> {
    let cells = accuracy.rows.iter().enumerate().flat_map(|(i, r)| {
        (0..=i).map(move |j| AccuracyCell { after_task: i + 1, task: j + 1, correct: r.correct[j], total: r.total[j], accuracy: r.task_accuracy(j) })
    });
    write_csv(&dir.join("accuracy.csv"), cells)?;
    let avg = accuracy.avg().into_iter().enumerate().map(|(i, a)| AverageRow { after_task: i + 1, average: a, max_average: max_average.get(i).copied().flatten() });
    write_csv(&dir.join("average.csv"), avg)
}

/// Writes the record directory for one finished run.
pub fn write_record(cfg: &ExperimentConfig, seed: u64, outcome: &TrainOutcome, model: &ModelConfig, dir: &Path) -> Result<RunRecord> {
    let shape = model.image_shape;
    fs::create_dir_all(dir)?;
    let mut artifacts = Vec::new();
    let mut snapshot = cfg.clone();
    snapshot.seeds = vec![seed];
    fs::write(dir.join("config.toml"), snapshot.to_toml()?)?;
    fs::write(dir.join("seeds.json"), serde_json::to_string_pretty(&serde_json::json!({ "root": seed, "config_seeds": cfg.seeds }))?)?;
    artifacts.extend(["config.toml", "seeds.json"].map(String::from));

    let max_average = max_average_per_task(&outcome.curve, outcome.accuracy.tasks);
    write_accuracy_csv(&outcome.accuracy, &max_average, dir)?;
    write_csv(&dir.join("curve.csv"), &outcome.curve)?;
    write_csv(&dir.join("scalars.csv"), &outcome.scalars)?;
    write_csv(&dir.join("filter_rates.csv"), &outcome.filter_rates)?;
    artifacts.extend(["accuracy.csv", "average.csv", "curve.csv", "scalars.csv", "filter_rates.csv"].map(String::from));

    if !outcome.samples.is_empty() {
        fs::create_dir_all(dir.join("grids"))?;
        for s in &outcome.samples {
            let per_row = (s.labels.len() / s.labels.iter().collect::<std::collections::BTreeSet<_>>().len().max(1)).max(1);
            let name = format!("grids/task-{}.png", s.task);
            save_grid(&s.images, shape, per_row, &dir.join(&name))?;
            artifacts.push(name);
        }
    }
    if cfg.checkpoints {
        fs::create_dir_all(dir.join("checkpoints"))?;
        let extra = serde_json::json!({ "seed": seed, "tasks": outcome.accuracy.rows.len(), "method": outcome.method });
        match &outcome.model {
            TrainedModel::AcGan(m) => {
                checkpoint::save(m, extra, &dir.join("checkpoints/model.ckpt"))?;
                artifacts.push("checkpoints/model.ckpt".into());
            }
            TrainedModel::Classifier(c) => {
                checkpoint::save_classifier(c, model, extra, &dir.join("checkpoints/classifier.ckpt"))?;
                artifacts.push("checkpoints/classifier.ckpt".into());
            }
            TrainedModel::Dgr { gan, solver } => {
                checkpoint::save(gan, extra.clone(), &dir.join("checkpoints/model.ckpt"))?;
                checkpoint::save_classifier(solver, &gan.config, extra, &dir.join("checkpoints/solver.ckpt"))?;
                artifacts.extend(["checkpoints/model.ckpt", "checkpoints/solver.ckpt"].map(String::from));
            }
        }
        if let Some(b) = &outcome.buffer {
            b.save(&dir.join("checkpoints/buffer.ckpt"))?;
            artifacts.push("checkpoints/buffer.ckpt".into());
        }
    }
    let record = RunRecord {
        name: cfg.name.clone(),
        method: outcome.method,
        dataset: cfg.dataset.name,
        seed,
        config: cfg.clone(),
        accuracy: outcome.accuracy.clone(),
        curve: outcome.curve.clone(),
        max_average,
        iterations: outcome.iterations.clone(),
        filter_rates: outcome.filter_rates.clone(),
        memory: memory_report(outcome, shape, cfg),
        wall_clock_seconds: outcome.task_seconds.clone(),
        dir: dir.to_path_buf(),
        artifacts,
    };
    fs::write(dir.join(RECORD_FILE), serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

/// Runs every seed of a parsed config. Records go to `out_root/<name>/seed-<seed>`.
pub fn run_config(cfg: &ExperimentConfig, out_root: &Path) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let (seq, model) = cfg.task_sequence()?;
    let mut records = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        log::info!("{}: {} on {} with seed {seed}", cfg.name, cfg.method.method, cfg.dataset.name);
        let outcome = train(&seq, &model, &cfg.method, seed)?;
        let dir = out_root.join(&cfg.name).join(format!("seed-{seed}"));
        records.push(write_record(cfg, seed, &outcome, &model, &dir)?);
    }
    Ok(records)
}

/// Reads a config file and runs it.
pub fn run_experiment(config_path: &Path, out_root: &Path) -> Result<Vec<RunRecord>> {
    run_config(&ExperimentConfig::load(config_path)?, out_root)
}
