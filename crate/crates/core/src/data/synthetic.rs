//! Procedural dataset: every class owns a few random "mode" prototypes and
//! each example is a noisy copy of one of its class's modes. Small, fast and
//! linearly separable enough for smoke tests of the whole pipeline.

use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{ClassInfo, Dataset, DatasetName, ImageShape, Split};
use crate::rng::SeedTree;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub shape: ImageShape,
    pub num_classes: usize,
    pub train_per_class: usize,
    pub eval_per_class: usize,
    pub modes_per_class: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { shape: ImageShape::new(8, 8, 1), num_classes: 10, train_per_class: 200, eval_per_class: 50, modes_per_class: 3, noise: 0.15, seed: 0 }
    }
}

fn split(spec: &SyntheticSpec, prototypes: &[Vec<Vec<f32>>], per_class: usize, seeds: &SeedTree, name: &str) -> Split {
    let mut rng = seeds.rng(name);
    let noise = Normal::new(0.0, spec.noise).expect("valid std");
    let mut images = Vec::with_capacity(spec.num_classes * per_class * spec.shape.len());
    let mut labels = Vec::with_capacity(spec.num_classes * per_class);
    // interleave classes like the real files do
    for i in 0..per_class {
        for (c, modes) in prototypes.iter().enumerate() {
            let proto = &modes[(i + rng.random_range(0..modes.len())) % modes.len()];
            images.extend(proto.iter().map(|&p| (p + noise.sample(&mut rng) as f32).clamp(-1.0, 1.0)));
            labels.push(c);
        }
    }
    Split::new(spec.shape, images, labels)
}

pub fn prototypes(spec: SyntheticSpec) -> Dataset {
    let seeds = SeedTree::new(spec.seed);
    let mut rng = seeds.rng("prototypes");
    let protos: Vec<Vec<Vec<f32>>> = (0..spec.num_classes)
        .map(|_| {
            let base: Vec<f32> = (0..spec.shape.len()).map(|_| rng.random_range(-0.9f32..0.9)).collect();
            (0..spec.modes_per_class.max(1))
                .map(|_| base.iter().map(|&b| (b + rng.random_range(-0.3f32..0.3)).clamp(-1.0, 1.0)).collect())
                .collect()
        })
        .collect();
    let train = split(&spec, &protos, spec.train_per_class, &seeds, "train");
    let eval = split(&spec, &protos, spec.eval_per_class, &seeds, "eval");
    Dataset {
        name: DatasetName::Synthetic,
        shape: spec.shape,
        classes: (0..spec.num_classes).map(|id| ClassInfo { id, source_label: id as u32, name: format!("class-{id}") }).collect(),
        train: Arc::new(train),
        eval: Arc::new(eval),
        files: Vec::new(),
    }
}
