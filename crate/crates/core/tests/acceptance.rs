//! Acceptance criteria A1-A8. Prints exactly one `A<n> PASS|FAIL <detail>`
//! line per criterion and exits non-zero when any fails. Positional
//! arguments (`cargo test --test acceptance -- a2 a5`) select criteria.
//!
//! The training criteria run the shipped configs in `configs/` on the real
//! MNIST and Fashion-MNIST files (`scripts/fetch_data.py`). Missing data is a
//! failure, not a skip.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use clogan::buffer::{buffer_construct, select::roulette, MemoryBuffer, Selector};
use clogan::continual::{memory_equiv_images, train, BufferConfig, MemoryAccounting, Method, MethodConfig, SolverConfig};
use clogan::data::synthetic::{prototypes, SyntheticSpec};
use clogan::data::{make_task_sequence, ClassOrder, ImageShape};
use clogan::filtering::{bernoulli_accept, cfm_from_logits, drs_acceptance, drs_filter, BurnInStats, DrsConfig};
use clogan::harness::config::SyntheticSection;
use clogan::harness::{mean_std, run_config, DatasetConfig, ExperimentConfig, RunRecord};
use clogan::losses::*;
use clogan::nn::{AcGan, Architecture, ClassMask, ModelConfig};
use clogan::rng::rng_from_seed;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng as _;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data_root() -> PathBuf {
    std::env::var_os(clogan::data::DATA_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| workspace().join("data"))
}

type Outcome = (bool, String);

/// Runs a shipped config (every seed it lists) and returns its records.
fn run_shipped(file: &str) -> Result<Vec<RunRecord>, String> {
    let mut cfg = ExperimentConfig::load(&workspace().join("configs").join(file)).map_err(|e| e.to_string())?;
    cfg.dataset.root = Some(data_root());
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_config(&cfg, out.path()).map_err(|e| format!("{file}: {e}"))
}

fn final_mean(records: &[RunRecord]) -> f64 {
    mean_std(&records.iter().map(RunRecord::final_average).collect::<Vec<_>>()).0
}

/// Per-seed finals and their mean for a shipped config.
fn finals(file: &str) -> Result<(Vec<f64>, f64), String> {
    let records = run_shipped(file)?;
    Ok((records.iter().map(RunRecord::final_average).collect(), final_mean(&records)))
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// The class_kcenter CloGAN runs serve both A4 and A5.
fn kcenter_runs() -> &'static Result<(Vec<f64>, f64), String> {
    static RUNS: OnceLock<Result<(Vec<f64>, f64), String>> = OnceLock::new();
    RUNS.get_or_init(|| finals("fashion_select_class_kcenter.toml"))
}

fn a1_fine_tuning_forgets() -> Outcome {
    match run_shipped("mnist_fgd.toml") {
        Ok(records) => {
            let r = &records[0];
            let avg = r.final_average();
            let last = r.accuracy.final_task_accuracy().unwrap_or(0.0);
            let pass = (0.12..=0.28).contains(&avg) && last > 0.9;
            (pass, format!("FGD split-MNIST final average {} (want 12..28), last task {} (want > 90), {:.0}s", pct(avg), pct(last), r.wall_clock_seconds.iter().sum::<f64>()))
        }
        Err(e) => (false, e),
    }
}

fn a2_clogan_mnist_headline() -> Outcome {
    match run_shipped("mnist_clogan.toml") {
        Ok(records) => {
            let r = &records[0];
            let epochs = r.config.method.epochs_per_task;
            let avg = r.final_average();
            let pass = avg >= 0.90 && epochs <= 5.0;
            (pass, format!("CloGAN split-MNIST 1.6% buffer final average {} (want >= 90) at {epochs} epochs/task, {:.0}s", pct(avg), r.wall_clock_seconds.iter().sum::<f64>()))
        }
        Err(e) => (false, e),
    }
}

fn a3_method_ordering_on_fashion() -> Outcome {
    let runs: Result<Vec<(Vec<f64>, f64)>, String> = ["fashion_clogan.toml", "fashion_dgr.toml", "fashion_ewc.toml", "fashion_fgd.toml"].iter().map(|f| finals(f)).collect();
    match runs {
        Ok(r) => {
            let (clogan, dgr, ewc, fgd) = (r[0].1, r[1].1, r[2].1, r[3].1);
            let gap = 0.05;
            let pass = clogan - dgr >= gap && clogan - ewc >= gap && ewc - fgd >= gap;
            (
                pass,
                format!("split-FASHION 3-seed means: CloGAN {} DGR {} EWC {} FGD {} (gaps CloGAN-DGR {}, CloGAN-EWC {}, EWC-FGD {}; want >= 5)", pct(clogan), pct(dgr), pct(ewc), pct(fgd), pct(clogan - dgr), pct(clogan - ewc), pct(ewc - fgd)),
            )
        }
        Err(e) => (false, e),
    }
}

fn a4_buffer_selection_ordering() -> Outcome {
    let runs = kcenter_runs().clone().and_then(|k| Ok((k, finals("fashion_select_none.toml")?, finals("fashion_select_peak_difference.toml")?)));
    match runs {
        Ok(((_, kc), (_, none), (_, peak))) => {
            let pass = kc >= none && none >= peak && kc - peak >= 0.05;
            (pass, format!("FASHION 0.16% buffer 3-seed means: class_kcenter {} none {} peak_difference {} (want kcenter >= none >= peak, kcenter-peak >= 5)", pct(kc), pct(none), pct(peak)))
        }
        Err(e) => (false, e),
    }
}

fn a5_generated_replay_beats_frozen() -> Outcome {
    // SVHN is not available offline, so this uses the split-FASHION fallback.
    let runs = kcenter_runs().clone().and_then(|k| Ok((k, finals("fashion_frozen.toml")?)));
    match runs {
        Ok(((cs, clogan), (fs, frozen))) => {
            let pass = clogan - frozen >= 0.03;
            (pass, format!("split-FASHION 0.16% class_kcenter buffer: CloGAN {} {cs:.4?} vs Frozen-CloGAN {} {fs:.4?} (gap {}, want >= 3)", pct(clogan), pct(frozen), pct(clogan - frozen)))
        }
        Err(e) => (false, e),
    }
}

fn a6_memory_accounting() -> Outcome {
    let acc = MemoryAccounting::default();
    let rgb = memory_equiv_images(1_600_000, ImageShape::new(32, 32, 3), &acc);
    let gray = memory_equiv_images(1_600_000, ImageShape::new(28, 28, 1), &acc);
    let built = AcGan::<f32>::build(&ModelConfig::default(), 0).map(|m| m.generator_param_count()).unwrap_or(0);
    (rgb == 2572 && gray == 6226, format!("1.6M parameters = {rgb} RGB / {gray} gray images (want 2572 / 6226); default generator has {built} parameters"))
}

fn check(name: &str, ok: Result<(), String>, failures: &mut Vec<String>) {
    if let Err(e) = ok {
        failures.push(format!("{name}: {e}"));
    }
}

fn prop<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new(PropConfig { cases, failure_persistence: None, ..PropConfig::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn toy_sequence(classes: usize, per_class: usize, seed: u64) -> clogan::data::TaskSequence {
    let ds = prototypes(SyntheticSpec { num_classes: classes, train_per_class: per_class, eval_per_class: 5, modes_per_class: 5, seed, ..Default::default() });
    make_task_sequence(&ds, 2, &ClassOrder::Identity).unwrap()
}

fn buffer_invariants() -> Result<(), String> {
    let strategy = (1usize..60, 1usize..6, 3usize..30, 0u64..1000, prop_oneof![Just(Selector::ClassKcenter), Just(Selector::None)]);
    prop(16, strategy, |(capacity, k_c, per_class, seed, selector)| {
        let seq = toy_sequence(6, per_class, seed);
        let mut buffer = MemoryBuffer::new(capacity, k_c, seq.shape);
        for task in &seq.tasks {
            let before = buffer.clone();
            buffer = buffer_construct(&buffer, &task.train, selector, None, seed).unwrap();
            prop_assert!(buffer.len() <= capacity);
            let now: BTreeSet<u64> = buffer.entries().iter().map(|e| e.seq).collect();
            for e in before.entries().iter().filter(|e| now.contains(&e.seq)) {
                prop_assert_eq!(buffer.entries().iter().find(|x| x.seq == e.seq).unwrap(), e);
            }
            if capacity >= buffer.classes().len() {
                let counts: Vec<usize> = buffer.class_counts().values().copied().collect();
                prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            }
            let counts = buffer.cluster_counts();
            for class in buffer.classes() {
                let max = counts.iter().filter(|((c, _), _)| *c == class).map(|(_, &n)| n).max().unwrap();
                for (&(c, s), &size) in buffer.cluster_sizes().iter().filter(|((c, _), _)| *c == class) {
                    let n = counts.get(&(c, s)).copied().unwrap_or(0);
                    prop_assert!(n + 1 >= max || n == size);
                }
            }
        }
        Ok(())
    })
}

fn cfm_soundness() -> Result<(), String> {
    prop(64, (proptest::collection::vec(0usize..3, 0..40), 0u64..1000), |(labels, seed)| {
        let mut rng = rng_from_seed(seed);
        let logits = Array2::from_shape_fn((labels.len(), 5), |_| rng.random_range(-3.0f32..3.0));
        let mask = ClassMask::from_classes(5, [0, 1, 2]);
        let r = cfm_from_logits(logits.view(), &labels, &mask).unwrap();
        let mut seen: Vec<usize> = r.kept.iter().copied().chain(r.rejected.iter().map(|&(i, _)| i)).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..labels.len()).collect::<Vec<_>>());
        for &i in &r.kept {
            prop_assert_eq!(mask.argmax(logits.row(i).as_slice().unwrap()), labels[i]);
        }
        for &(i, _) in &r.rejected {
            prop_assert_ne!(mask.argmax(logits.row(i).as_slice().unwrap()), labels[i]);
        }
        Ok(())
    })
}

fn random(rows: usize, cols: usize, seed: u64, scale: f64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

fn loss_linearity() -> Result<(), String> {
    prop(64, (0u64..1000, 0.0f64..5.0), |(seed, lambda)| {
        let logits = random(6, 4, seed, 4.0);
        let scores = random(1, 6, seed + 1, 3.0).row(0).to_owned();
        let fake = random(1, 3, seed + 2, 3.0).row(0).to_owned();
        let labels = [0, 1, 3, 0, 1, 3];
        let mask = ClassMask::from_classes(4, [0, 1, 3]);
        let at = |l: f64| discriminator_loss(fake.view(), scores.view(), Some(logits.view()), &labels, Some(&[1.0, 1.0, 1.0, l, l, l]), &mask, AdversarialMode::CrossEntropy, LossWeights::default()).unwrap().0;
        let (l0, l1, ll) = (at(0.0), at(1.0), at(lambda));
        prop_assert!((ll.total - (l0.total + lambda * (l1.total - l0.total))).abs() < 1e-9 * (1.0 + ll.total.abs()));
        Ok(())
    })
}

fn critic_antisymmetry() -> Result<(), String> {
    let v = || proptest::collection::vec(-10.0f64..10.0, 1..8);
    prop(64, (v(), v()), |(a, b)| {
        let (a, b) = (Array1::from(a), Array1::from(b));
        let mask = ClassMask::all(1);
        let loss = |f: &Array1<f64>, r: &Array1<f64>| discriminator_loss(f.view(), r.view(), None, &[], None, &mask, AdversarialMode::Critic, LossWeights::default()).unwrap().0.l_ft;
        prop_assert!((loss(&a, &b) + loss(&b, &a)).abs() < 1e-9);
        Ok(())
    })
}

fn central_differences(n: usize, mut get: impl FnMut(usize) -> f64, mut set: impl FnMut(usize, f64), mut f: impl FnMut() -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..n)
        .map(|i| {
            let x = get(i);
            set(i, x + h);
            let up = f();
            set(i, x - h);
            let down = f();
            set(i, x);
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

fn gradient_checks() -> Result<(), String> {
    let mut cfg = ModelConfig::mlp(ImageShape::new(3, 3, 1), 4);
    cfg.latent_dim = 3;
    cfg.arch = Architecture::Mlp { generator_hidden: vec![6], critic_hidden: vec![7], leaky_slope: 0.2 };
    let mask = ClassMask::from_classes(4, [0, 1, 2]);
    for mode in [AdversarialMode::CrossEntropy, AdversarialMode::Critic] {
        let settings = ObjectiveSettings { mode, weights: LossWeights { adversarial: 1.0, classification: 0.8 }, generator_weights: None, gradient_penalty: 0.0 };
        let mut model = AcGan::<f64>::build(&cfg, 5).map_err(|e| e.to_string())?;
        let batch = ObjectiveBatch {
            real: random(6, 9, 12, 1.0),
            real_labels: vec![0, 1, 1, 0, 2, 0],
            real_weights: vec![1.0, 1.0, 1.0, 1.0, 1.7, 1.7],
            adversarial_rows: vec![true, true, true, false, true, true],
            fake: clogan::nn::LatentBatch::with_labels(&mut rng_from_seed(11), 3, vec![0, 2, 1, 1]),
        };
        let out = task_objective(&model, &batch, &mask, &settings).map_err(|e| e.to_string())?;
        let flat_len: usize = model.critic.param_sizes().iter().sum();
        let locate = |sizes: &[usize], mut i: usize| {
            let mut t = 0;
            while i >= sizes[t] {
                i -= sizes[t];
                t += 1;
            }
            (t, i)
        };
        let sizes = model.critic.param_sizes();
        let m = std::cell::RefCell::new(&mut model);
        let numeric = central_differences(
            flat_len,
            |i| {
                let (t, j) = locate(&sizes, i);
                m.borrow().critic.param_slices()[t][j]
            },
            |i, v| {
                let (t, j) = locate(&sizes, i);
                m.borrow_mut().critic.param_slices_mut()[t][j] = v;
            },
            || discriminator_objective(&m.borrow(), &batch, &mask, &settings).unwrap().0.total,
        );
        let err = rel_err(&out.discriminator_grads.flat(), &numeric);
        if err >= 1e-4 {
            return Err(format!("{mode:?} discriminator rel err {err:.2e}"));
        }
        let sizes = m.borrow().generator.net.param_sizes();
        let numeric = central_differences(
            sizes.iter().sum(),
            |i| {
                let (t, j) = locate(&sizes, i);
                m.borrow().generator.net.param_slices()[t][j]
            },
            |i, v| {
                let (t, j) = locate(&sizes, i);
                m.borrow_mut().generator.net.param_slices_mut()[t][j] = v;
            },
            || generator_objective(&m.borrow(), &batch.fake, &mask, &settings).unwrap().0.total,
        );
        let err = rel_err(&out.generator_grads.flat(), &numeric);
        if err >= 1e-4 {
            return Err(format!("{mode:?} generator rel err {err:.2e}"));
        }
    }
    Ok(())
}

fn small_model(classes: usize) -> ModelConfig {
    ModelConfig { latent_dim: 8, arch: Architecture::Mlp { generator_hidden: vec![32], critic_hidden: vec![32], leaky_slope: 0.2 }, ..ModelConfig::mlp(ImageShape::new(8, 8, 1), classes) }
}

fn quick(method: Method) -> MethodConfig {
    let mut cfg = MethodConfig::new(method);
    cfg.iterations_per_task = Some(4);
    cfg.batch_size = 16;
    cfg.grid_per_class = 0;
    if method.uses_buffer() {
        cfg.buffer = Some(BufferConfig { size: clogan::buffer::BufferSize::Images(12), ..BufferConfig::percent(1.0) });
    }
    if method == Method::Dgr {
        cfg.solver = Some(SolverConfig::default());
    }
    cfg
}

fn snapshot_counters() -> Result<(), String> {
    let seq = toy_sequence(8, 30, 0);
    let tasks = seq.len();
    for (method, generators, solvers) in [(Method::Clogan, 0, 0), (Method::Mergan, tasks - 1, 0), (Method::Dgr, tasks - 1, tasks - 1)] {
        let out = train(&seq, &small_model(8), &quick(method), 1).map_err(|e| e.to_string())?;
        if (out.generator_snapshots, out.solver_snapshots) != (generators, solvers) {
            return Err(format!("{method}: {} generator / {} solver copies, want {generators} / {solvers}", out.generator_snapshots, out.solver_snapshots));
        }
    }
    Ok(())
}

fn toy_experiment() -> ExperimentConfig {
    let mut dataset = DatasetConfig::new(clogan::data::DatasetName::Synthetic);
    dataset.synthetic = Some(SyntheticSection { num_classes: 4, side: 8, train_per_class: 30, eval_per_class: 10, seed: 0 });
    let mut m = quick(Method::Clogan);
    m.eval_every = 2;
    let mut cfg = ExperimentConfig::new("acceptance-toy", dataset, m);
    cfg.model.latent_dim = 8;
    cfg.seeds = vec![3];
    cfg.checkpoints = false;
    cfg
}

fn recompute_and_determinism() -> Result<(), String> {
    let cfg = toy_experiment();
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let ra = run_config(&cfg, a.path()).map_err(|e| e.to_string())?;
    let rb = run_config(&cfg, b.path()).map_err(|e| e.to_string())?;
    for r in &ra {
        for (x, y) in r.accuracy.avg().iter().zip(r.accuracy.recompute_avg()) {
            if (x - y).abs() > 1e-9 {
                return Err(format!("stored average {x} vs recomputed {y}"));
            }
        }
    }
    for (x, y) in ra.iter().zip(&rb) {
        if x.accuracy != y.accuracy || x.curve != y.curve {
            return Err("two runs with the same seed differ".into());
        }
    }
    Ok(())
}

fn a7_property_suites() -> Outcome {
    let mut failures = Vec::new();
    check("buffer invariants", buffer_invariants(), &mut failures);
    check("cfm soundness", cfm_soundness(), &mut failures);
    check("loss linearity", loss_linearity(), &mut failures);
    check("critic antisymmetry", critic_antisymmetry(), &mut failures);
    check("gradients", gradient_checks(), &mut failures);
    check("snapshot counters", snapshot_counters(), &mut failures);
    check("recompute and determinism", recompute_and_determinism(), &mut failures);
    let detail = if failures.is_empty() {
        "buffer invariants, CFM soundness, lambda_mem linearity, critic antisymmetry, gradients (rel 1e-4), copy counters, average recompute (1e-9), determinism".to_string()
    } else {
        failures.join("; ")
    };
    (failures.is_empty(), detail)
}

fn a8_filter_monte_carlo() -> Outcome {
    let draws = 10_000;
    let mut worst: f64 = 0.0;

    // roulette: a single pick lands on index i with probability w_i / sum(w)
    let weights = [1.0, 2.0, 3.0, 4.0, 0.0, 10.0];
    let total: f64 = weights.iter().sum();
    let mut hits = [0usize; 6];
    let mut rng = rng_from_seed(2024);
    for _ in 0..draws {
        hits[roulette(&weights, 1, &mut rng)[0]] += 1;
    }
    for (i, &w) in weights.iter().enumerate() {
        worst = worst.max((hits[i] as f64 / draws as f64 - w / total).abs());
    }

    // stub acceptance probabilities through the Bernoulli sampler
    let probs = [0.05, 0.2, 0.5, 0.73, 0.99];
    let mut kept = [0usize; 5];
    for _ in 0..draws {
        for i in bernoulli_accept(&probs, &mut rng).kept {
            kept[i] += 1;
        }
    }
    for (i, &p) in probs.iter().enumerate() {
        worst = worst.max((kept[i] as f64 / draws as f64 - p).abs());
    }

    // DRS on fixed stub scores: closed-form probabilities, then sampled frequencies
    let scores = [-3.0f32, -1.0, 0.0, 0.5, 2.0];
    let config = DrsConfig::default();
    let mut stats = BurnInStats::default();
    stats.observe(&[1.0, 2.0]);
    let p = drs_acceptance(&scores, &mut stats.clone(), &config).unwrap();
    let f: Vec<f64> = scores.iter().map(|&s| f64::from(s) - 2.0).map(|d| d - (1.0 - (d - config.epsilon).exp()).ln()).collect();
    let mut sorted = f.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = 0.8 * (sorted.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    let gamma = sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64);
    let closed: Vec<f64> = f.iter().map(|v| 1.0 / (1.0 + (gamma - v).exp())).collect();
    let formula_err = p.iter().zip(&closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut kept = [0usize; 5];
    for _ in 0..draws {
        for i in drs_filter(&scores, &mut stats, &config, &mut rng).unwrap().kept {
            kept[i] += 1;
        }
    }
    for (i, &pi) in p.iter().enumerate() {
        worst = worst.max((kept[i] as f64 / draws as f64 - pi).abs());
    }
    (worst <= 0.02 && formula_err < 1e-9, format!("max |frequency - probability| {worst:.4} over {draws} draws (want <= 0.02); DRS closed-form error {formula_err:.1e}"))
}

fn main() -> std::process::ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("A1", a1_fine_tuning_forgets),
        ("A2", a2_clogan_mnist_headline),
        ("A3", a3_method_ordering_on_fashion),
        ("A4", a4_buffer_selection_ordering),
        ("A5", a5_generated_replay_beats_frozen),
        ("A6", a6_memory_accounting),
        ("A7", a7_property_suites),
        ("A8", a8_filter_monte_carlo),
    ];
    // libtest flags such as --nocapture are accepted and ignored
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).map(|a| a.to_uppercase()).collect();
    let mut failed = 0;
    for (id, criterion) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f == id) {
            continue;
        }
        let (pass, detail) = criterion();
        println!("{id} {} {detail}", if pass { "PASS" } else { "FAIL" });
        failed += usize::from(!pass);
    }
    if failed == 0 {
        std::process::ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        std::process::ExitCode::FAILURE
    }
}
