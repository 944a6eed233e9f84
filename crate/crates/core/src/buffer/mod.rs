//! Fixed-budget episodic memory.
//!
//! Every stored image carries its class and a per-class cluster id
//! (superlabel) fixed at insertion. The budget is shared evenly by all classes
//! seen so far; inside a class it is shared evenly by its superlabels, and
//! eviction always shrinks the largest superlabel group first, oldest entry
//! first, so the spread never exceeds one.

pub mod kmeans;
pub mod select;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::data::{ExampleSet, ImageShape};
use crate::error::{Error, Result};
use crate::nn::{ClassMask, Classifier, Critic};
use crate::rng::{Rng, SeedTree};

pub const ARCHIVE_KIND: &str = "clogan.buffer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    /// k-means per class, equal counts per cluster.
    #[default]
    ClassKcenter,
    /// Roulette on the kurtosis of the classifier logits.
    Kurtosis,
    /// Roulette on the top-1 minus top-2 softmax gap.
    PeakDifference,
    /// Uniform random per class.
    None,
}

impl Selector {
    pub fn needs_model(self) -> bool {
        matches!(self, Selector::Kurtosis | Selector::PeakDifference)
    }
}

impl std::str::FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_kcenter" => Ok(Selector::ClassKcenter),
            "kurtosis" => Ok(Selector::Kurtosis),
            "peak_difference" => Ok(Selector::PeakDifference),
            "none" => Ok(Selector::None),
            other => Err(Error::config_at("buffer.selector", format!("unknown selector `{other}`"))),
        }
    }
}

/// Buffer budget as a share of the training partition or an absolute count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BufferSize {
    Percent(f64),
    Images(usize),
}

impl BufferSize {
    /// Image count; percentages are rounded to the nearest image.
    pub fn resolve(self, train_size: usize) -> usize {
        match self {
            BufferSize::Percent(p) => (p / 100.0 * train_size as f64).round().max(0.0) as usize,
            BufferSize::Images(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub image: Vec<f32>,
    pub label: usize,
    pub superlabel: usize,
    /// Insertion order, used for oldest-first eviction.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    pub capacity: usize,
    pub clusters_per_class: usize,
    pub shape: ImageShape,
    entries: Vec<BufferEntry>,
    next_seq: u64,
    /// Pool size of every `(class, superlabel)` cluster at insertion time.
    cluster_sizes: BTreeMap<(usize, usize), usize>,
}

/// Anything with a class head usable for score-based selection.
pub trait LogitSource {
    fn class_logits(&self, x: &Array2<f32>) -> Array2<f32>;
}

impl LogitSource for Critic<f32> {
    fn class_logits(&self, x: &Array2<f32>) -> Array2<f32> {
        self.forward(x).logits.expect("critic without class head")
    }
}

impl LogitSource for Classifier<f32> {
    fn class_logits(&self, x: &Array2<f32>) -> Array2<f32> {
        self.logits(x)
    }
}

impl<F: Fn(&Array2<f32>) -> Array2<f32>> LogitSource for F {
    fn class_logits(&self, x: &Array2<f32>) -> Array2<f32> {
        self(x)
    }
}

pub struct Scorer<'a> {
    pub source: &'a dyn LogitSource,
    pub mask: &'a ClassMask,
}

impl MemoryBuffer {
    pub fn new(capacity: usize, clusters_per_class: usize, shape: ImageShape) -> Self {
        Self { capacity, clusters_per_class: clusters_per_class.max(1), shape, entries: Vec::new(), next_seq: 0, cluster_sizes: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn classes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.entries.iter().map(|e| e.label).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.label).or_insert(0) += 1;
        }
        m
    }

    /// Counts per `(class, superlabel)`.
    pub fn cluster_counts(&self) -> BTreeMap<(usize, usize), usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry((e.label, e.superlabel)).or_insert(0) += 1;
        }
        m
    }

    /// How many candidates each `(class, superlabel)` cluster had when it was
    /// filled. A group can only fall more than one below its class's largest
    /// group when it holds its whole cluster.
    pub fn cluster_sizes(&self) -> &BTreeMap<(usize, usize), usize> {
        &self.cluster_sizes
    }

    /// Storage cost with one byte per pixel plus a 4-byte label.
    pub fn stored_bytes(&self) -> usize {
        self.entries.len() * (self.shape.len() + 4)
    }

    fn push(&mut self, image: Vec<f32>, label: usize, superlabel: usize) {
        self.entries.push(BufferEntry { image, label, superlabel, seq: self.next_seq });
        self.next_seq += 1;
    }

    /// Shrinks `class` to `quota` entries: repeatedly drops the oldest entry of
    /// its largest superlabel group (lowest superlabel on ties).
    fn evict_class(&mut self, class: usize, quota: usize) {
        let mut groups: BTreeMap<usize, Vec<(u64, usize)>> = BTreeMap::new();
        for (pos, e) in self.entries.iter().enumerate().filter(|(_, e)| e.label == class) {
            groups.entry(e.superlabel).or_default().push((e.seq, pos));
        }
        for g in groups.values_mut() {
            g.sort_unstable_by(|a, b| b.0.cmp(&a.0));
        }
        let mut count: usize = groups.values().map(Vec::len).sum();
        let mut doomed = Vec::new();
        while count > quota {
            let largest = groups.iter().max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(a.0))).map(|(&s, _)| s).expect("non-empty class");
            let (_, pos) = groups.get_mut(&largest).expect("exists").pop().expect("non-empty group");
            doomed.push(pos);
            count -= 1;
        }
        doomed.sort_unstable();
        let mut i = 0;
        let mut pos = 0;
        self.entries.retain(|_| {
            let keep = doomed.get(i) != Some(&pos);
            if !keep {
                i += 1;
            }
            pos += 1;
            keep
        });
    }

    pub fn to_archive(&self) -> Archive {
        let meta = serde_json::json!({
            "capacity": self.capacity,
            "clusters_per_class": self.clusters_per_class,
            "shape": self.shape,
            "next_seq": self.next_seq,
        });
        let mut a = Archive::new(ARCHIVE_KIND, meta);
        let n = self.entries.len();
        a.push_f32("images", vec![n, self.shape.len()], self.entries.iter().flat_map(|e| e.image.iter().copied()).collect());
        a.push_u32("labels", vec![n], self.entries.iter().map(|e| e.label as u32).collect());
        a.push_u32("superlabels", vec![n], self.entries.iter().map(|e| e.superlabel as u32).collect());
        a.push_u32("seq_lo", vec![n], self.entries.iter().map(|e| e.seq as u32).collect());
        a.push_u32("seq_hi", vec![n], self.entries.iter().map(|e| (e.seq >> 32) as u32).collect());
        let m = self.cluster_sizes.len();
        a.push_u32("cluster_keys", vec![m, 2], self.cluster_sizes.keys().flat_map(|&(c, s)| [c as u32, s as u32]).collect());
        a.push_u32("cluster_sizes", vec![m], self.cluster_sizes.values().map(|&n| n as u32).collect());
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != ARCHIVE_KIND {
            return Err(Error::contract(format!("archive holds `{}`, not a buffer", a.kind)));
        }
        #[derive(Deserialize)]
        struct Meta {
            capacity: usize,
            clusters_per_class: usize,
            shape: ImageShape,
            next_seq: u64,
        }
        let meta: Meta = serde_json::from_value(a.meta.clone())?;
        let images = a.f32("images")?;
        let labels = a.u32("labels")?;
        let superlabels = a.u32("superlabels")?;
        let lo = a.u32("seq_lo")?;
        let hi = a.u32("seq_hi")?;
        let d = meta.shape.len();
        let n = labels.len();
        if images.len() != n * d || superlabels.len() != n || lo.len() != n || hi.len() != n {
            return Err(Error::contract("buffer archive arrays disagree in length"));
        }
        let entries = (0..n)
            .map(|i| BufferEntry {
                image: images[i * d..(i + 1) * d].to_vec(),
                label: labels[i] as usize,
                superlabel: superlabels[i] as usize,
                seq: u64::from(lo[i]) | (u64::from(hi[i]) << 32),
            })
            .collect();
        let keys = a.u32("cluster_keys")?;
        let sizes = a.u32("cluster_sizes")?;
        if keys.len() != 2 * sizes.len() {
            return Err(Error::contract("buffer archive cluster tables disagree in length"));
        }
        let cluster_sizes = sizes.iter().enumerate().map(|(i, &n)| ((keys[2 * i] as usize, keys[2 * i + 1] as usize), n as usize)).collect();
        Ok(Self { capacity: meta.capacity, clusters_per_class: meta.clusters_per_class, shape: meta.shape, entries, next_seq: meta.next_seq, cluster_sizes })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

/// Positions (into `pool`) chosen for one class, with their superlabels.
/// Also returns the pool size of each superlabel.
fn select_class(pool: &ExampleSet, positions: &[usize], quota: usize, selector: Selector, k_c: usize, scorer: Option<&Scorer<'_>>, rng: &mut Rng) -> Result<(Vec<(usize, usize)>, Vec<usize>)> {
    let single = vec![positions.len()];
    if quota >= positions.len() && selector != Selector::ClassKcenter {
        return Ok((positions.iter().map(|&p| (p, 0)).collect(), single));
    }
    match selector {
        Selector::ClassKcenter => {
            let points: Vec<&[f32]> = positions.iter().map(|&p| pool.image(p)).collect();
            let clustering = kmeans::kmeans(&points, k_c, rng);
            let k = clustering.centroids.len();
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (i, &c) in clustering.assignment.iter().enumerate() {
                members[c].push(positions[i]);
            }
            // superlabel 0 is the most populous cluster
            members.sort_by(|a, b| b.len().cmp(&a.len()).then(a.first().cmp(&b.first())));
            let caps: Vec<usize> = members.iter().map(Vec::len).collect();
            let shares = select::water_fill(quota, &caps);
            let mut out = Vec::with_capacity(quota);
            for (superlabel, (mut group, take)) in members.into_iter().zip(shares).enumerate() {
                group.shuffle(rng);
                out.extend(group.into_iter().take(take).map(|p| (p, superlabel)));
            }
            Ok((out, caps))
        }
        Selector::None => {
            let mut p = positions.to_vec();
            p.shuffle(rng);
            p.truncate(quota);
            Ok((p.into_iter().map(|p| (p, 0)).collect(), single))
        }
        Selector::Kurtosis | Selector::PeakDifference => {
            let scorer = scorer.ok_or_else(|| Error::contract(format!("selector {selector:?} needs a model to score with")))?;
            let picked = score_select(selector, scorer, pool, positions, quota, rng)?;
            Ok((picked.into_iter().map(|p| (p, 0)).collect(), single))
        }
    }
}

/// Scores every position with the classifier and keeps `budget` of them by
/// roulette sampling without replacement. Keeps everything (with a warning)
/// when the budget exceeds the pool.
pub fn score_select(selector: Selector, scorer: &Scorer<'_>, pool: &ExampleSet, positions: &[usize], budget: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if budget >= positions.len() {
        if budget > positions.len() {
            log::warn!("selection budget {budget} exceeds pool of {}; keeping all", positions.len());
        }
        return Ok(positions.to_vec());
    }
    let score: fn(&[f32], &ClassMask) -> f64 = match selector {
        Selector::Kurtosis => select::kurtosis,
        Selector::PeakDifference => select::peak_difference,
        other => return Err(Error::contract(format!("{other:?} is not a score-based selector"))),
    };
    let mut scores = Vec::with_capacity(positions.len());
    for chunk in positions.chunks(512) {
        let (x, _) = pool.gather(chunk);
        let logits = scorer.source.class_logits(&x);
        scores.extend(logits.rows().into_iter().map(|r| score(r.as_slice().expect("contiguous"), scorer.mask)));
    }
    Ok(select::roulette(&scores, budget, rng).into_iter().map(|i| positions[i]).collect())
}

/// Rebuilds the buffer after a task: shares the capacity evenly over every
/// class seen so far, evicts old classes down to their share and fills the
/// new classes' shares with `selector`.
pub fn buffer_construct(old: &MemoryBuffer, new_data: &ExampleSet, selector: Selector, scorer: Option<&Scorer<'_>>, seed: u64) -> Result<MemoryBuffer> {
    if old.capacity == 0 {
        return Err(Error::contract("buffer capacity must be positive"));
    }
    if new_data.is_empty() {
        return Err(Error::contract("no new data to insert"));
    }
    if new_data.shape() != old.shape {
        return Err(Error::contract("new data shape differs from the buffer's"));
    }
    let stored = old.class_counts();
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for pos in 0..new_data.len() {
        by_class.entry(new_data.label(pos)).or_default().push(pos);
    }
    if let Some(c) = by_class.keys().find(|c| stored.contains_key(c)) {
        return Err(Error::contract(format!("class {c} is already stored")));
    }
    let mut classes: Vec<(usize, usize, bool)> = stored.iter().map(|(&c, &n)| (c, n, false)).collect();
    classes.extend(by_class.iter().map(|(&c, p)| (c, p.len(), true)));
    classes.sort_unstable();
    if old.capacity < classes.len() {
        log::warn!("buffer capacity {} is below the {} classes seen; keeping one image for the first {} classes only", old.capacity, classes.len(), old.capacity);
    }
    let caps: Vec<usize> = classes.iter().map(|&(_, n, _)| n).collect();
    let quotas = select::water_fill(old.capacity, &caps);

    let mut buffer = old.clone();
    let seeds = SeedTree::new(seed);
    for (&(class, _, is_new), &quota) in classes.iter().zip(&quotas) {
        if !is_new {
            buffer.evict_class(class, quota);
        }
    }
    for (&(class, _, is_new), &quota) in classes.iter().zip(&quotas) {
        if !is_new || quota == 0 {
            continue;
        }
        let mut rng = seeds.rng_at("class", class as u64);
        let (chosen, sizes) = select_class(new_data, &by_class[&class], quota, selector, old.clusters_per_class, scorer, &mut rng)?;
        for (superlabel, n) in sizes.into_iter().enumerate() {
            buffer.cluster_sizes.insert((class, superlabel), n);
        }
        for (pos, superlabel) in chosen {
            buffer.push(new_data.image(pos).to_vec(), class, superlabel);
        }
    }
    debug_assert!(buffer.len() <= buffer.capacity);
    Ok(buffer)
}

/// Draws `n` entries with replacement: a class uniformly, then an entry of
/// that class uniformly.
pub fn sample_memory(buffer: &MemoryBuffer, n: usize, rng: &mut Rng) -> Result<(Array2<f32>, Vec<usize>)> {
    if buffer.is_empty() {
        return Err(Error::contract("cannot sample from an empty buffer"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in buffer.entries.iter().enumerate() {
        by_class.entry(e.label).or_default().push(i);
    }
    let groups: Vec<&Vec<usize>> = by_class.values().collect();
    let mut x = Array2::zeros((n, buffer.shape.len()));
    let mut labels = Vec::with_capacity(n);
    for row in 0..n {
        let g = groups[rng.random_range(0..groups.len())];
        let e = &buffer.entries[g[rng.random_range(0..g.len())]];
        x.row_mut(row).as_slice_mut().expect("contiguous").copy_from_slice(&e.image);
        labels.push(e.label);
    }
    Ok((x, labels))
}
