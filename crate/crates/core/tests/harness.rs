use std::path::Path;

use clogan::continual::{BufferConfig, Method, MethodConfig};
use clogan::data::{default_root, load_dataset, make_task_sequence, single_headed_eval_set, ClassOrder, DatasetName};
use clogan::harness::config::SyntheticSection;
use clogan::harness::*;
use clogan::nn::{ClassMask, Classifier, ModelConfig};
use ndarray::Array2;

fn toy_config(name: &str, method: Method) -> ExperimentConfig {
    let mut dataset = DatasetConfig::new(DatasetName::Synthetic);
    dataset.synthetic = Some(SyntheticSection { num_classes: 4, side: 8, train_per_class: 30, eval_per_class: 10, seed: 0 });
    let mut m = MethodConfig::new(method);
    m.iterations_per_task = Some(5);
    m.batch_size = 16;
    m.eval_every = 2;
    if method.uses_buffer() {
        m.buffer = Some(BufferConfig { size: clogan::buffer::BufferSize::Images(8), ..BufferConfig::percent(0.0) });
    }
    let mut cfg = ExperimentConfig::new(name, dataset, m);
    cfg.model.latent_dim = 8;
    cfg.seeds = vec![1, 2];
    cfg
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn run_record_directory_is_complete_and_reloads() {
    let tmp = tempfile::tempdir().unwrap();
    let records = run_config(&toy_config("toy-clogan", Method::Clogan), tmp.path()).unwrap();
    assert_eq!(records.len(), 2);
    let dir = tmp.path().join("toy-clogan/seed-1");
    for f in ["config.toml", "seeds.json", "accuracy.csv", "average.csv", "curve.csv", "scalars.csv", "filter_rates.csv", "record.json", "grids/task-1.png", "grids/task-2.png", "checkpoints/model.ckpt", "checkpoints/buffer.ckpt"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let reloaded = RunRecord::load(&dir).unwrap();
    assert_eq!(reloaded, records[0]);
    let cfg = ExperimentConfig::load(&dir.join("config.toml")).unwrap();
    assert_eq!(cfg.seeds, vec![1]);
    assert_eq!(records[0].memory.generator_snapshots, 0);
    assert!(records[0].memory.buffer_images <= 8);
    let model = clogan::nn::checkpoint::load(&dir.join("checkpoints/model.ckpt")).unwrap();
    assert_eq!(model.generator_param_count(), records[0].memory.generator_params);
}

#[test]
fn same_config_and_seed_give_identical_matrices() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = toy_config("det", Method::Clogan);
    let ra = run_config(&cfg, a.path()).unwrap();
    let rb = run_config(&cfg, b.path()).unwrap();
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x.accuracy, y.accuracy);
        assert_eq!(x.curve, y.curve);
    }
    for f in ["accuracy.csv", "average.csv", "curve.csv", "scalars.csv"] {
        assert_eq!(read(&a.path().join("det/seed-2").join(f)), read(&b.path().join("det/seed-2").join(f)), "{f}");
    }
}

#[test]
fn averages_recompute_from_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    for method in [Method::Fgd, Method::Mergan] {
        let mut cfg = toy_config(method.as_str(), method);
        cfg.seeds = vec![0];
        for r in run_config(&cfg, tmp.path()).unwrap() {
            for (a, b) in r.accuracy.avg().iter().zip(r.accuracy.recompute_avg()) {
                assert!((a - b).abs() <= 1e-9);
            }
            for (i, row) in r.accuracy.rows.iter().enumerate() {
                assert_eq!(row.total.len(), i + 1);
                assert!(row.total.iter().all(|&n| n == 20));
            }
        }
    }
}

#[test]
fn report_is_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let mut records = run_config(&toy_config("clogan", Method::Clogan), tmp.path()).unwrap();
    records.extend(run_config(&toy_config("fgd", Method::Fgd), tmp.path()).unwrap());
    let first = emit_report(&records, &tmp.path().join("r1")).unwrap();
    let reloaded: Vec<RunRecord> = records.iter().map(|r| RunRecord::load(&r.dir).unwrap()).collect();
    let second = emit_report(&reloaded, &tmp.path().join("r2")).unwrap();
    assert_eq!(first.len(), second.len());
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(a.file_name(), b.file_name());
        assert_eq!(read(a), read(b), "{}", a.display());
    }
    let md = String::from_utf8(read(&tmp.path().join("r1/report.md"))).unwrap();
    assert!(md.contains("| synthetic | clogan | clogan | 2 |"));
    assert!(tmp.path().join("r1/average-synthetic.svg").is_file());
    assert!(tmp.path().join("r1/tasks-synthetic-fgd.svg").is_file());
}

#[test]
fn summary_statistics_use_the_sample_deviation() {
    let (m, s) = mean_std(&[0.5, 0.7, 0.9]);
    assert!((m - 0.7).abs() < 1e-12 && (s - 0.2).abs() < 1e-12);
    assert_eq!(mean_std(&[0.3]), (0.3, 0.0));
}

#[test]
fn perfect_predictor_scores_one_and_rows_grow_by_task() {
    let cfg = toy_config("stub", Method::Fgd);
    let (seq, _) = cfg.task_sequence().unwrap();
    // the synthetic set is built from class prototypes; peek at the labels instead
    let split = seq.tasks[0].eval.split.clone();
    let oracle = |x: &Array2<f32>, _: &ClassMask| -> Vec<usize> {
        x.rows()
            .into_iter()
            .map(|row| (0..split.len()).find(|&i| split.image(i) == row.as_slice().unwrap()).map(|i| split.labels[i]).unwrap())
            .collect()
    };
    for t in 1..=seq.len() {
        let row = evaluate(&oracle, &seq, t).unwrap();
        assert_eq!(row.total.len(), t);
        assert_eq!(row.average(), 1.0);
        let classes = single_headed_eval_set(&seq, t).unwrap().classes();
        assert_eq!(classes, seq.classes_through(t).into_iter().collect());
    }
}

#[test]
fn untrained_models_score_near_chance_on_mnist() {
    let Ok(ds) = load_dataset(DatasetName::Mnist, &default_root().canonicalize().unwrap_or_else(|_| Path::new("../../data").to_path_buf())) else {
        eprintln!("MNIST not available; skipped");
        return;
    };
    let seq = make_task_sequence(&ds, 10, &ClassOrder::Identity).unwrap();
    let model = ModelConfig::mlp(ds.shape, 10);
    let accs: Vec<f64> = (0..10).map(|s| evaluate(&Classifier::build(&model, Default::default(), s).unwrap(), &seq, 1).unwrap().average()).collect();
    let (mean, _) = mean_std(&accs);
    assert!((mean - 0.1).abs() <= 0.02, "{accs:?}");
}

#[test]
fn bad_config_files_report_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    let mut text = toy_config("bad", Method::Clogan).to_toml().unwrap();
    text = text.replace("batch_size = 16", "batch_size = -3");
    std::fs::write(&path, text).unwrap();
    let err = run_experiment(&path, tmp.path()).unwrap_err();
    assert!(err.to_string().contains("method.batch_size"), "{err}");
}
