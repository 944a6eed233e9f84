//! Python module `clogan`: configs, runs, reports, the episodic buffer and
//! the scalar building blocks (losses, filters, selection scores).

use std::path::PathBuf;
use std::sync::Arc;

use clogan::buffer::{self, MemoryBuffer, Scorer, Selector};
use clogan::data::{self, DatasetName, ExampleSet, ImageShape, Split};
use clogan::filtering::{self, BurnInStats, DrsConfig};
use clogan::harness::{self, ExperimentConfig, RunRecord};
use clogan::nn::{checkpoint, ClassMask};
use clogan::rng::rng_from_seed;
use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(clogan, ConfigError, PyValueError);
create_exception!(clogan, IngestionError, PyIOError);
create_exception!(clogan, ContractError, PyValueError);

fn err(e: clogan::Error) -> PyErr {
    let msg = e.to_string();
    match e {
        clogan::Error::Config { .. } => ConfigError::new_err(msg),
        clogan::Error::Ingestion { .. } | clogan::Error::Io(_) => IngestionError::new_err(msg),
        _ => ContractError::new_err(msg),
    }
}

fn parse<T: std::str::FromStr<Err = clogan::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn matrix(rows: &[Vec<f32>], width: usize) -> PyResult<Array2<f32>> {
    if rows.iter().any(|r| r.len() != width) {
        return Err(ContractError::new_err(format!("every row must have {width} values")));
    }
    Ok(Array2::from_shape_vec((rows.len(), width), rows.concat()).expect("checked widths"))
}

fn rows(m: &Array2<f32>) -> Vec<Vec<f32>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn mask(capacity: usize, active: Option<Vec<usize>>) -> PyResult<ClassMask> {
    match active {
        None => Ok(ClassMask::all(capacity)),
        Some(a) => {
            if let Some(&c) = a.iter().find(|&&c| c >= capacity) {
                return Err(ContractError::new_err(format!("class {c} outside 0..{capacity}")));
            }
            Ok(ClassMask::from_classes(capacity, a))
        }
    }
}

/// A loaded benchmark dataset.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[getter]
    fn name(&self) -> String {
        self.inner.name.to_string()
    }

    /// `(height, width, channels)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let s = self.inner.shape;
        (s.height, s.width, s.channels)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn train_size(&self) -> usize {
        self.inner.train.len()
    }

    #[getter]
    fn eval_size(&self) -> usize {
        self.inner.eval.len()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.classes.iter().map(|c| c.name.clone()).collect()
    }

    fn train_labels(&self) -> Vec<usize> {
        self.inner.train.labels.clone()
    }

    /// Pixels of one training image, scaled to `[-1, 1]`.
    fn train_image(&self, index: usize) -> PyResult<Vec<f32>> {
        if index >= self.inner.train.len() {
            return Err(ContractError::new_err(format!("index {index} out of range")));
        }
        Ok(self.inner.train.image(index).to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Dataset({}, {} train, {} eval, {} classes)", self.inner.name, self.inner.train.len(), self.inner.eval.len(), self.inner.num_classes())
    }
}

/// Loads a benchmark from `root` (default: `$CLOGAN_DATA_ROOT` or `./data`).
#[pyfunction]
#[pyo3(signature = (name, root=None))]
fn load_dataset(name: &str, root: Option<PathBuf>) -> PyResult<PyDataset> {
    let name: DatasetName = parse(name)?;
    let root = root.unwrap_or_else(data::default_root);
    Ok(PyDataset { inner: data::load_dataset(name, &root).map_err(err)? })
}

/// Procedural dataset of noisy class prototypes.
#[pyfunction]
#[pyo3(signature = (num_classes=10, side=8, train_per_class=200, eval_per_class=50, seed=0))]
fn synthetic_dataset(num_classes: usize, side: usize, train_per_class: usize, eval_per_class: usize, seed: u64) -> PyDataset {
    let spec = data::synthetic::SyntheticSpec { shape: ImageShape::new(side, side, 1), num_classes, train_per_class, eval_per_class, seed, ..Default::default() };
    PyDataset { inner: data::synthetic::prototypes(spec) }
}

#[pyclass(name = "ExperimentConfig", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ExperimentConfig::from_toml(text).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: ExperimentConfig::load(&path).map_err(err)? })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.method.to_string()
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[setter]
    fn set_seeds(&mut self, seeds: Vec<u64>) -> PyResult<()> {
        if seeds.is_empty() {
            return Err(ConfigError::new_err("at least one seed is required"));
        }
        self.inner.seeds = seeds;
        Ok(())
    }

    /// Trains every seed and writes records under `out/<name>/seed-<seed>`.
    fn run(&self, py: Python<'_>, out: PathBuf) -> PyResult<Vec<PyRunRecord>> {
        let cfg = self.inner.clone();
        let records = py.detach(move || harness::run_config(&cfg, &out)).map_err(err)?;
        Ok(records.into_iter().map(|inner| PyRunRecord { inner }).collect())
    }
}

#[pyclass(name = "RunRecord", frozen)]
struct PyRunRecord {
    inner: RunRecord,
}

#[pymethods]
impl PyRunRecord {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: RunRecord::load(&path).map_err(err)? })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn directory(&self) -> PathBuf {
        self.inner.dir.clone()
    }

    #[getter]
    fn final_average(&self) -> f64 {
        self.inner.final_average()
    }

    /// Running average accuracy after each task.
    #[getter]
    fn average(&self) -> Vec<f64> {
        self.inner.accuracy.avg()
    }

    /// `grid[i][j]`: accuracy on task `j` after task `i` (`None` for `j > i`).
    #[getter]
    fn grid(&self) -> Vec<Vec<Option<f64>>> {
        self.inner.accuracy.grid()
    }

    #[getter]
    fn max_average(&self) -> Vec<Option<f64>> {
        self.inner.max_average.clone()
    }

    fn memory<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = &self.inner.memory;
        let d = PyDict::new(py);
        d.set_item("buffer_capacity", m.buffer_capacity)?;
        d.set_item("buffer_images", m.buffer_images)?;
        d.set_item("buffer_bytes", m.buffer_bytes)?;
        d.set_item("generator_params", m.generator_params)?;
        d.set_item("generator_bytes", m.generator_bytes)?;
        d.set_item("generator_equiv_images", m.generator_equiv_images)?;
        d.set_item("generator_snapshots", m.generator_snapshots)?;
        d.set_item("solver_snapshots", m.solver_snapshots)?;
        d.set_item("snapshot_bytes", m.snapshot_bytes)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("RunRecord({}, {}, seed={}, final_average={:.4})", self.inner.name, self.inner.method, self.inner.seed, self.inner.final_average())
    }
}

/// Writes the markdown/CSV/SVG report for `records` into `out`.
#[pyfunction]
fn emit_report(records: Vec<PyRef<'_, PyRunRecord>>, out: PathBuf) -> PyResult<Vec<PathBuf>> {
    let owned: Vec<RunRecord> = records.iter().map(|r| r.inner.clone()).collect();
    harness::emit_report(&owned, &out).map_err(err)
}

/// Buffer images with the same byte size as `params` generator parameters.
#[pyfunction]
fn memory_equiv_images(params: usize, shape: (usize, usize, usize)) -> usize {
    clogan::continual::memory_equiv_images(params, ImageShape::new(shape.0, shape.1, shape.2), &Default::default())
}

/// Episodic memory of real images. Updates return a new buffer.
#[pyclass(name = "MemoryBuffer", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBuffer {
    inner: MemoryBuffer,
}

#[pymethods]
impl PyBuffer {
    #[new]
    #[pyo3(signature = (capacity, shape, clusters_per_class=5))]
    fn new(capacity: usize, shape: (usize, usize, usize), clusters_per_class: usize) -> Self {
        Self { inner: MemoryBuffer::new(capacity, clusters_per_class, ImageShape::new(shape.0, shape.1, shape.2)) }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: MemoryBuffer::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    /// Adds a task's images (rows in `[-1, 1]`). Score-based selectors need
    /// a model checkpoint whose class head ranks the candidates.
    #[pyo3(signature = (images, labels, selector="class_kcenter", seed=0, checkpoint_path=None, active=None))]
    fn add_task(
        &self,
        images: Vec<Vec<f32>>,
        labels: Vec<usize>,
        selector: &str,
        seed: u64,
        checkpoint_path: Option<PathBuf>,
        active: Option<Vec<usize>>,
    ) -> PyResult<Self> {
        let selector: Selector = parse(selector)?;
        let shape = self.inner.shape;
        if images.len() != labels.len() {
            return Err(ContractError::new_err(format!("{} images but {} labels", images.len(), labels.len())));
        }
        let x = matrix(&images, shape.len())?;
        let split = Split::new(shape, x.into_raw_vec_and_offset().0, labels);
        let set = ExampleSet::all(Arc::new(split));
        let model = checkpoint_path.map(|p| checkpoint::load(&p)).transpose().map_err(err)?;
        let inner = match &model {
            Some(m) => {
                let mask = mask(m.config.num_classes, active)?;
                let scorer = Scorer { source: &m.critic, mask: &mask };
                buffer::buffer_construct(&self.inner, &set, selector, Some(&scorer), seed)
            }
            None => buffer::buffer_construct(&self.inner, &set, selector, None, seed),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    /// `n` stored samples: a class uniformly, then an entry of it uniformly.
    #[pyo3(signature = (n, seed=0))]
    fn sample(&self, n: usize, seed: u64) -> PyResult<(Vec<Vec<f32>>, Vec<usize>)> {
        let (x, y) = buffer::sample_memory(&self.inner, n, &mut rng_from_seed(seed)).map_err(err)?;
        Ok((rows(&x), y))
    }

    #[getter]
    fn capacity(&self) -> usize {
        self.inner.capacity
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.entries().iter().map(|e| e.label).collect()
    }

    #[getter]
    fn superlabels(&self) -> Vec<usize> {
        self.inner.entries().iter().map(|e| e.superlabel).collect()
    }

    fn class_counts(&self) -> std::collections::BTreeMap<usize, usize> {
        self.inner.class_counts()
    }

    fn stored_bytes(&self) -> usize {
        self.inner.stored_bytes()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Mean weighted cross-entropy over `active` classes and its gradient with
/// respect to the logits.
#[pyfunction]
#[pyo3(signature = (logits, labels, active=None, weights=None))]
fn classification_loss(logits: Vec<Vec<f64>>, labels: Vec<usize>, active: Option<Vec<usize>>, weights: Option<Vec<f64>>) -> PyResult<(f64, Vec<Vec<f64>>)> {
    let k = logits.first().map_or(0, Vec::len);
    if logits.iter().any(|r| r.len() != k) {
        return Err(ContractError::new_err("ragged logits"));
    }
    let m = Array2::from_shape_vec((logits.len(), k), logits.concat()).expect("checked widths");
    let (loss, grad) = clogan::losses::classification_loss(m.view(), &labels, weights.as_deref(), &mask(k, active)?).map_err(err)?;
    Ok((loss, grad.rows().into_iter().map(|r| r.to_vec()).collect()))
}

/// Indices whose discriminator score is at least `threshold`.
#[pyfunction]
fn srf_filter(scores: Vec<f32>, threshold: f64) -> Vec<usize> {
    filtering::srf_filter(&scores, threshold).kept
}

/// Class-conditional filter from precomputed logits: indices whose argmax
/// over `active` matches the conditioning label.
#[pyfunction]
#[pyo3(signature = (logits, labels, active=None))]
fn cfm_filter(logits: Vec<Vec<f32>>, labels: Vec<usize>, active: Option<Vec<usize>>) -> PyResult<Vec<usize>> {
    let k = logits.first().map_or(0, Vec::len);
    let m = matrix(&logits, k)?;
    Ok(filtering::cfm_from_logits(m.view(), &labels, &mask(k, active)?).map_err(err)?.kept)
}

/// DRS acceptance probabilities given burn-in statistics `(max_logit, samples)`.
#[pyfunction]
#[pyo3(signature = (scores, max_logit, burn_in_samples, gamma_percentile=80.0, epsilon=1e-6))]
fn drs_acceptance(scores: Vec<f32>, max_logit: f64, burn_in_samples: usize, gamma_percentile: f64, epsilon: f64) -> PyResult<Vec<f64>> {
    let cfg = DrsConfig { burn_in_samples, gamma_percentile, epsilon };
    let mut stats = BurnInStats { max_logit, samples: burn_in_samples };
    filtering::drs_acceptance(&scores, &mut stats, &cfg).map_err(err)
}

/// `k` indices drawn without replacement with probability proportional to `weights`.
#[pyfunction]
#[pyo3(signature = (weights, k, seed=0))]
fn roulette(weights: Vec<f64>, k: usize, seed: u64) -> Vec<usize> {
    buffer::select::roulette(&weights, k, &mut rng_from_seed(seed))
}

/// Pearson kurtosis of the softmax over `active` classes.
#[pyfunction]
#[pyo3(signature = (logits, active=None))]
fn kurtosis(logits: Vec<f32>, active: Option<Vec<usize>>) -> PyResult<f64> {
    Ok(buffer::select::kurtosis(&logits, &mask(logits.len(), active)?))
}

/// Gap between the two largest softmax probabilities over `active` classes.
#[pyfunction]
#[pyo3(signature = (logits, active=None))]
fn peak_difference(logits: Vec<f32>, active: Option<Vec<usize>>) -> PyResult<f64> {
    Ok(buffer::select::peak_difference(&logits, &mask(logits.len(), active)?))
}

#[pymodule(name = "clogan")]
fn clogan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("IngestionError", py.get_type::<IngestionError>())?;
    m.add("ContractError", py.get_type::<ContractError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRunRecord>()?;
    m.add_class::<PyBuffer>()?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(emit_report, m)?)?;
    m.add_function(wrap_pyfunction!(memory_equiv_images, m)?)?;
    m.add_function(wrap_pyfunction!(classification_loss, m)?)?;
    m.add_function(wrap_pyfunction!(srf_filter, m)?)?;
    m.add_function(wrap_pyfunction!(cfm_filter, m)?)?;
    m.add_function(wrap_pyfunction!(drs_acceptance, m)?)?;
    m.add_function(wrap_pyfunction!(roulette, m)?)?;
    m.add_function(wrap_pyfunction!(kurtosis, m)?)?;
    m.add_function(wrap_pyfunction!(peak_difference, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
