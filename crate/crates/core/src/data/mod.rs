//! Benchmark datasets, disjoint-class task sequences and single-headed
//! evaluation sets.
//!
//! Images are stored planar (`c*h*w`, row-major within a channel) and scaled
//! to `[-1, 1]`. Labels are remapped to a contiguous `0..num_classes` range at
//! load time and never remapped again: task `t` of a sequence is evaluated
//! with the same global class ids it was trained with.

pub mod idx;
pub mod matfile;
pub mod synthetic;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Environment variable naming the dataset root directory.
pub const DATA_ROOT_ENV: &str = "CLOGAN_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Mnist,
    Fashion,
    Svhn,
    Emnist,
    /// Procedurally generated class prototypes; for smoke tests and demos.
    Synthetic,
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(Self::Mnist),
            "fashion" | "fashion-mnist" | "fashion_mnist" => Ok(Self::Fashion),
            "svhn" => Ok(Self::Svhn),
            "emnist" => Ok(Self::Emnist),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::config_at("dataset", format!("unknown dataset `{other}` (expected mnist, fashion, svhn, emnist or synthetic)"))),
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Mnist => "mnist",
            Self::Fashion => "fashion",
            Self::Svhn => "svhn",
            Self::Emnist => "emnist",
            Self::Synthetic => "synthetic",
        };
        f.write_str(s)
    }
}

/// Owned image/label pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub image: Vec<f32>,
    pub label: usize,
}

/// One partition (train or eval) of a dataset, images contiguous in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub shape: ImageShape,
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn new(shape: ImageShape, images: Vec<f32>, labels: Vec<usize>) -> Self {
        assert_eq!(images.len(), labels.len() * shape.len(), "image buffer does not match label count");
        Self { shape, images, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let d = self.shape.len();
        &self.images[i * d..(i + 1) * d]
    }

    pub fn example(&self, i: usize) -> LabeledExample {
        LabeledExample { image: self.image(i).to_vec(), label: self.labels[i] }
    }

    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }
}

/// A subset of a split, by index. Cheap to clone.
#[derive(Debug, Clone)]
pub struct ExampleSet {
    pub split: Arc<Split>,
    pub indices: Vec<usize>,
}

impl ExampleSet {
    pub fn all(split: Arc<Split>) -> Self {
        let indices = (0..split.len()).collect();
        Self { split, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn shape(&self) -> ImageShape {
        self.split.shape
    }

    pub fn label(&self, pos: usize) -> usize {
        self.split.labels[self.indices[pos]]
    }

    pub fn image(&self, pos: usize) -> &[f32] {
        self.split.image(self.indices[pos])
    }

    pub fn labels(&self) -> Vec<usize> {
        self.indices.iter().map(|&i| self.split.labels[i]).collect()
    }

    pub fn classes(&self) -> BTreeSet<usize> {
        self.indices.iter().map(|&i| self.split.labels[i]).collect()
    }

    /// Rows for the given positions (not raw split indices).
    pub fn gather(&self, positions: &[usize]) -> (Array2<f32>, Vec<usize>) {
        let d = self.shape().len();
        let mut x = Array2::zeros((positions.len(), d));
        let mut labels = Vec::with_capacity(positions.len());
        for (row, &p) in positions.iter().enumerate() {
            x.row_mut(row).as_slice_mut().expect("contiguous").copy_from_slice(self.image(p));
            labels.push(self.label(p));
        }
        (x, labels)
    }

    pub fn to_matrix(&self) -> (Array2<f32>, Vec<usize>) {
        let all: Vec<usize> = (0..self.len()).collect();
        self.gather(&all)
    }

    pub fn filter_classes(&self, classes: &BTreeSet<usize>) -> ExampleSet {
        let indices = self.indices.iter().copied().filter(|&i| classes.contains(&self.split.labels[i])).collect();
        ExampleSet { split: Arc::clone(&self.split), indices }
    }

    pub fn examples(&self) -> Vec<LabeledExample> {
        self.indices.iter().map(|&i| self.split.example(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    /// Contiguous id used everywhere in this crate.
    pub id: usize,
    /// Label as stored in the source files.
    pub source_label: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: DatasetName,
    pub shape: ImageShape,
    pub classes: Vec<ClassInfo>,
    pub train: Arc<Split>,
    pub eval: Arc<Split>,
    pub files: Vec<FileRecord>,
}

/// Reproducibility record of an ingested dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset: DatasetName,
    pub shape: ImageShape,
    pub num_classes: usize,
    pub train_count: usize,
    pub eval_count: usize,
    pub train_per_class: Vec<usize>,
    pub eval_per_class: Vec<usize>,
    pub classes: Vec<ClassInfo>,
    pub files: Vec<FileRecord>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn manifest(&self) -> DatasetManifest {
        let count = |split: &Split| {
            let mut c = vec![0; self.num_classes()];
            for &l in &split.labels {
                c[l] += 1;
            }
            c
        };
        DatasetManifest {
            dataset: self.name,
            shape: self.shape,
            num_classes: self.num_classes(),
            train_count: self.train.len(),
            eval_count: self.eval.len(),
            train_per_class: count(&self.train),
            eval_per_class: count(&self.eval),
            classes: self.classes.clone(),
            files: self.files.clone(),
        }
    }
}

fn file_record(path: &Path) -> Result<FileRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::ingestion(path, e.to_string()))?;
    Ok(FileRecord { path: path.to_path_buf(), bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(&bytes)) })
}

fn to_unit_range(p: u8) -> f32 {
    f32::from(p) / 127.5 - 1.0
}

/// Default data root: `$CLOGAN_DATA_ROOT`, else `./data`.
pub fn default_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
}

struct RawSplit {
    shape: ImageShape,
    pixels: Vec<u8>,
    labels: Vec<u32>,
}

fn idx_split(dir: &Path, images: &str, labels: &str, transpose: bool, files: &mut Vec<FileRecord>) -> Result<RawSplit> {
    let ip = idx::locate(dir, images)?;
    let lp = idx::locate(dir, labels)?;
    let img = idx::read_images(&ip)?;
    let lab = idx::read_labels(&lp)?;
    if img.count != lab.len() {
        return Err(Error::ingestion(&lp, format!("{} labels for {} images in {}", lab.len(), img.count, ip.display())));
    }
    files.push(file_record(&ip)?);
    files.push(file_record(&lp)?);
    let mut pixels = img.pixels;
    if transpose {
        let (r, c) = (img.rows, img.cols);
        for chunk in pixels.chunks_exact_mut(r * c) {
            let copy = chunk.to_vec();
            for y in 0..r {
                for x in 0..c {
                    chunk[y * c + x] = copy[x * r + y];
                }
            }
        }
    }
    Ok(RawSplit { shape: ImageShape::new(img.rows, img.cols, 1), pixels, labels: lab.into_iter().map(u32::from).collect() })
}

fn svhn_split(path: &Path, files: &mut Vec<FileRecord>) -> Result<RawSplit> {
    let arrays = matfile::read(path)?;
    let find = |name: &str| arrays.iter().find(|a| a.name == name).ok_or_else(|| Error::ingestion(path, format!("variable `{name}` missing")));
    let x = find("X")?;
    let y = find("y")?;
    if x.dims.len() != 4 || x.dims[2] != 3 {
        return Err(Error::ingestion(path, format!("`X` should be HxWx3xN, found {:?}", x.dims)));
    }
    let (h, w, n) = (x.dims[0], x.dims[1], x.dims[3]);
    if y.data.len() != n {
        return Err(Error::ingestion(path, format!("{} labels for {n} images", y.data.len())));
    }
    let MatData::U8(src) = &x.data else {
        return Err(Error::ingestion(path, "`X` must be uint8"));
    };
    // column-major (h, w, c, n) -> planar rows (n, c, h, w)
    let mut pixels = vec![0u8; n * 3 * h * w];
    for s in 0..n {
        for c in 0..3 {
            for col in 0..w {
                for row in 0..h {
                    pixels[((s * 3 + c) * h + row) * w + col] = src[row + h * (col + w * (c + 3 * s))];
                }
            }
        }
    }
    let labels = (0..n).map(|i| y.data.get_f64(i) as u32).collect();
    files.push(file_record(path)?);
    Ok(RawSplit { shape: ImageShape::new(h, w, 3), pixels, labels })
}

use matfile::MatData;

/// Keeps only `keep` source labels, remapped to `0..keep.len()` in that order.
fn finish_split(raw: RawSplit, keep: &[u32], file_hint: &Path) -> Result<Split> {
    let d = raw.shape.len();
    let mut images = Vec::with_capacity(raw.pixels.len());
    let mut labels = Vec::with_capacity(raw.labels.len());
    for (i, &l) in raw.labels.iter().enumerate() {
        if let Some(id) = keep.iter().position(|&k| k == l) {
            images.extend(raw.pixels[i * d..(i + 1) * d].iter().map(|&p| to_unit_range(p)));
            labels.push(id);
        }
    }
    if labels.is_empty() {
        return Err(Error::ingestion(file_hint, "no examples of the expected classes"));
    }
    Ok(Split::new(raw.shape, images, labels))
}

const FASHION_NAMES: [&str; 10] = ["t-shirt/top", "trouser", "pullover", "dress", "coat", "sandal", "shirt", "sneaker", "bag", "ankle boot"];

/// Number of EMNIST letter classes used (a..x).
pub const EMNIST_CLASSES: usize = 24;

/// Loads train and eval partitions of a benchmark from its canonical files:
///
/// - `mnist/`, `fashion/`: `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`
/// - `emnist/`: `emnist-letters-{train,test}-{images-idx3,labels-idx1}-ubyte[.gz]`;
///   only the first 24 letters (a..x) are kept
/// - `svhn/`: `train_32x32.mat`, `test_32x32.mat` (label 10 is digit 0)
pub fn load_dataset(name: DatasetName, root: &Path) -> Result<Dataset> {
    let mut files = Vec::new();
    let (train, eval, keep, names): (RawSplit, RawSplit, Vec<u32>, Vec<String>) = match name {
        DatasetName::Mnist | DatasetName::Fashion => {
            let dir = root.join(name.to_string());
            let train = idx_split(&dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte", false, &mut files)?;
            let eval = idx_split(&dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", false, &mut files)?;
            let names = if name == DatasetName::Fashion { FASHION_NAMES.iter().map(|s| s.to_string()).collect() } else { (0..10).map(|d| d.to_string()).collect() };
            (train, eval, (0..10).collect(), names)
        }
        DatasetName::Emnist => {
            let dir = root.join("emnist");
            let train = idx_split(&dir, "emnist-letters-train-images-idx3-ubyte", "emnist-letters-train-labels-idx1-ubyte", true, &mut files)?;
            let eval = idx_split(&dir, "emnist-letters-test-images-idx3-ubyte", "emnist-letters-test-labels-idx1-ubyte", true, &mut files)?;
            let keep: Vec<u32> = (1..=EMNIST_CLASSES as u32).collect();
            let names = keep.iter().map(|&l| char::from(b'a' + (l - 1) as u8).to_string()).collect();
            (train, eval, keep, names)
        }
        DatasetName::Svhn => {
            let dir = root.join("svhn");
            let train = svhn_split(&dir.join("train_32x32.mat"), &mut files)?;
            let eval = svhn_split(&dir.join("test_32x32.mat"), &mut files)?;
            // digit d is stored as d, except 0 which is stored as 10
            let keep: Vec<u32> = std::iter::once(10).chain(1..10).collect();
            (train, eval, keep, (0..10).map(|d| d.to_string()).collect())
        }
        DatasetName::Synthetic => return Ok(synthetic::prototypes(synthetic::SyntheticSpec::default())),
    };
    let shape = train.shape;
    if eval.shape != shape {
        return Err(Error::ingestion(root, "train and eval image shapes differ"));
    }
    let hint = files.first().map(|f| f.path.clone()).unwrap_or_else(|| root.to_path_buf());
    let classes = keep.iter().zip(names).enumerate().map(|(id, (&source_label, name))| ClassInfo { id, source_label, name }).collect();
    Ok(Dataset {
        name,
        shape,
        classes,
        train: Arc::new(finish_split(train, &keep, &hint)?),
        eval: Arc::new(finish_split(eval, &keep, &hint)?),
        files,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassOrder {
    /// Ascending class id.
    Identity,
    /// Seeded random permutation.
    Shuffled(u64),
    /// Explicit permutation of all class ids.
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    /// 1-based.
    pub task_index: usize,
    pub class_ids: Vec<usize>,
    pub train: ExampleSet,
    pub eval: ExampleSet,
}

#[derive(Debug, Clone)]
pub struct TaskSequence {
    pub dataset_name: DatasetName,
    pub shape: ImageShape,
    pub num_classes: usize,
    pub tasks: Vec<TaskSpec>,
    /// Size of the full training partition (the reference for percent-sized buffers).
    pub train_size: usize,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, t: usize) -> Result<&TaskSpec> {
        if t == 0 || t > self.tasks.len() {
            return Err(Error::Bounds { index: t, len: self.tasks.len() });
        }
        Ok(&self.tasks[t - 1])
    }

    /// Classes of tasks `1..=through`.
    pub fn classes_through(&self, through: usize) -> Vec<usize> {
        self.tasks.iter().take(through).flat_map(|t| t.class_ids.iter().copied()).collect()
    }
}

pub fn make_task_sequence(dataset: &Dataset, classes_per_task: usize, order: &ClassOrder) -> Result<TaskSequence> {
    let k = dataset.num_classes();
    if classes_per_task == 0 || k % classes_per_task != 0 {
        return Err(Error::config_at("classes_per_task", format!("{classes_per_task} does not divide {k} classes")));
    }
    let permutation: Vec<usize> = match order {
        ClassOrder::Identity => (0..k).collect(),
        ClassOrder::Shuffled(seed) => {
            let mut p: Vec<usize> = (0..k).collect();
            p.shuffle(&mut rng_from_seed(*seed));
            p
        }
        ClassOrder::Explicit(p) => {
            let set: BTreeSet<usize> = p.iter().copied().collect();
            if p.len() != k || set.len() != k || set.iter().any(|&c| c >= k) {
                return Err(Error::config_at("class_order", format!("not a permutation of 0..{k}")));
            }
            p.clone()
        }
    };
    let train_all = ExampleSet::all(Arc::clone(&dataset.train));
    let eval_all = ExampleSet::all(Arc::clone(&dataset.eval));
    let tasks = permutation
        .chunks(classes_per_task)
        .enumerate()
        .map(|(i, chunk)| {
            let set: BTreeSet<usize> = chunk.iter().copied().collect();
            TaskSpec { task_index: i + 1, class_ids: chunk.to_vec(), train: train_all.filter_classes(&set), eval: eval_all.filter_classes(&set) }
        })
        .collect();
    Ok(TaskSequence { dataset_name: dataset.name, shape: dataset.shape, num_classes: k, tasks, train_size: dataset.train.len() })
}

/// Eval examples of every class seen in tasks `1..=through_task`, with their
/// global labels.
pub fn single_headed_eval_set(seq: &TaskSequence, through_task: usize) -> Result<ExampleSet> {
    seq.task(through_task)?;
    let first = &seq.tasks[0].eval;
    let mut indices: Vec<usize> = seq.tasks[..through_task].iter().flat_map(|t| t.eval.indices.iter().copied()).collect();
    indices.sort_unstable();
    Ok(ExampleSet { split: Arc::clone(&first.split), indices })
}
