//! Differentiable models with hand-written backward passes.
//!
//! Every network maps a batch of flat rows `(n, features)` to another batch;
//! images are planar (`c*h*w`) rows. Layers are generic over [`Real`] so that
//! the same code runs in `f32` for training and in `f64` for
//! finite-difference gradient checks.

pub mod checkpoint;
pub mod layers;
pub mod models;
pub mod network;
pub mod optim;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use serde::{Deserialize, Serialize};

pub use layers::{Activation, Conv2d, ConvGeometry, ConvTranspose2d, Layer, Linear};
pub use models::{AcGan, Architecture, Classifier, Critic, CriticOutput, FrozenCritic, FrozenGenerator, Generator, LatentBatch, ModelConfig};
pub use network::{Gradients, Sequential, Trace};
pub use optim::{Adam, AdamConfig};

pub trait Real:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + num_traits::FromPrimitive
    + std::ops::AddAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self;
}

impl Real for f32 {
    fn lit(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    fn lit(x: f64) -> Self {
        x
    }
}

/// Which class output nodes are in use. Inactive logits are excluded from
/// softmax, argmax and every gradient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMask {
    active: Vec<bool>,
}

impl ClassMask {
    pub fn none(capacity: usize) -> Self {
        Self { active: vec![false; capacity] }
    }

    pub fn all(capacity: usize) -> Self {
        Self { active: vec![true; capacity] }
    }

    pub fn from_classes(capacity: usize, classes: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = Self::none(capacity);
        for c in classes {
            mask.activate(c);
        }
        mask
    }

    pub fn activate(&mut self, class: usize) {
        self.active[class] = true;
    }

    pub fn capacity(&self) -> usize {
        self.active.len()
    }

    pub fn is_active(&self, class: usize) -> bool {
        self.active.get(class).copied().unwrap_or(false)
    }

    pub fn active_classes(&self) -> Vec<usize> {
        self.active.iter().enumerate().filter_map(|(i, &a)| a.then_some(i)).collect()
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Index of the largest active logit; ties go to the lowest class id.
    pub fn argmax<F: Real>(&self, logits: &[F]) -> usize {
        let mut best: Option<(usize, F)> = None;
        for (c, &v) in logits.iter().enumerate() {
            if !self.is_active(c) {
                continue;
            }
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((c, v)),
            }
        }
        best.map(|(c, _)| c).expect("argmax over an empty class mask")
    }
}
