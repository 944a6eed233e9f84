use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use clogan::data::{load_dataset, DatasetName, DATA_ROOT_ENV};
use clogan::harness::{emit_report, run_config, save_grid, ExperimentConfig, RunRecord};
use clogan::nn::{checkpoint, ClassMask, LatentBatch};
use clogan::rng::rng_from_seed;

/// Continual class-incremental learning experiments.
#[derive(Parser)]
#[command(name = "clogan", version)]
struct Cli {
    /// Dataset root (holds mnist/, fashion/, svhn/, emnist/).
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load datasets and write a manifest (counts, classes, file hashes) next to each.
    Ingest {
        /// Datasets to ingest; all four benchmarks when omitted.
        datasets: Vec<DatasetName>,
    },
    /// Run every seed of an experiment config.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Replace the config's seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Summarise run records (record directories or folders containing them).
    Report {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Write a sample grid from a model checkpoint.
    Grid {
        checkpoint: PathBuf,
        #[arg(long, default_value = "grid.png")]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        per_class: usize,
        /// Classes to draw; all when omitted.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn find_records(path: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if path.join(clogan::harness::record::RECORD_FILE).is_file() || path.is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path).with_context(|| format!("reading {}", path.display()))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for e in entries.into_iter().filter(|e| e.is_dir()) {
        find_records(&e, out)?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let root = cli.data_root.unwrap_or_else(clogan::data::default_root);
    match cli.command {
        Command::Ingest { datasets } => {
            let names = if datasets.is_empty() { vec![DatasetName::Mnist, DatasetName::Fashion, DatasetName::Svhn, DatasetName::Emnist] } else { datasets };
            let mut failed = None;
            for name in names {
                match load_dataset(name, &root) {
                    Ok(ds) => {
                        let dir = root.join(name.to_string());
                        std::fs::create_dir_all(&dir)?;
                        let path = dir.join("manifest.json");
                        std::fs::write(&path, serde_json::to_string_pretty(&ds.manifest())?)?;
                        println!("{name}: {} train / {} eval images, {} classes -> {}", ds.train.len(), ds.eval.len(), ds.num_classes(), path.display());
                    }
                    Err(e) => {
                        eprintln!("{name}: {e}");
                        failed = Some(e);
                    }
                }
            }
            if let Some(e) = failed {
                return Err(e.into());
            }
        }
        Command::Run { config, out, seeds } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            if cfg.dataset.root.is_none() {
                cfg.dataset.root = Some(root);
            }
            let records = run_config(&cfg, &out)?;
            for r in &records {
                println!("{} seed {}: final average accuracy {:.4} ({})", r.name, r.seed, r.final_average(), r.dir.display());
            }
        }
        Command::Report { records, out } => {
            let mut paths = Vec::new();
            for p in &records {
                find_records(p, &mut paths)?;
            }
            if paths.is_empty() {
                bail!("no record.json found under the given paths");
            }
            let loaded = paths.iter().map(|p| RunRecord::load(p)).collect::<Result<Vec<_>, _>>()?;
            for f in emit_report(&loaded, &out)? {
                println!("{}", f.display());
            }
        }
        Command::Grid { checkpoint: path, out, per_class, classes, seed } => {
            let model = checkpoint::load(&path)?;
            let k = model.config.num_classes;
            let classes = classes.unwrap_or_else(|| (0..k).collect());
            if let Some(&bad) = classes.iter().find(|&&c| c >= k) {
                return Err(clogan::Error::config_at("classes", format!("class {bad} outside 0..{k}")).into());
            }
            let mask = ClassMask::all(k);
            let mut rng = rng_from_seed(seed);
            let (draws, cols) = if model.generator.is_conditional() {
                let labels = classes.iter().flat_map(|&c| std::iter::repeat_n(c, per_class)).collect();
                (LatentBatch::with_labels(&mut rng, model.config.latent_dim, labels), per_class)
            } else {
                (LatentBatch::sample(&mut rng, per_class * classes.len(), model.config.latent_dim, &[]), per_class)
            };
            save_grid(&model.generate(&draws, &mask)?, model.config.image_shape, cols, &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<clogan::Error>() {
                Some(clogan::Error::Config { .. }) => 2,
                Some(clogan::Error::Ingestion { .. }) => 3,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
