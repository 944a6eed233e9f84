use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::network::Gradients;
use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    /// Common GAN setting.
    pub fn gan() -> Self {
        Self { learning_rate: 2e-4, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 }
    }

    /// Plain classifier training.
    pub fn classifier() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::gan()
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Array1<F>>,
    pub second_moment: Vec<Array1<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first_moment: sizes.iter().map(|&n| Array1::zeros(n)).collect(),
            second_moment: sizes.iter().map(|&n| Array1::zeros(n)).collect(),
        }
    }

    pub fn reset(&mut self) {
        self.step = 0;
        for m in self.first_moment.iter_mut().chain(self.second_moment.iter_mut()) {
            m.fill(F::zero());
        }
    }

    pub fn apply(&mut self, params: Vec<&mut [F]>, grads: &Gradients<F>) {
        assert_eq!(params.len(), grads.tensors.len(), "parameter/gradient tensor count mismatch");
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let bc1 = F::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = F::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = F::lit(c.learning_rate);
        let eps = F::lit(c.epsilon);
        for (((p, g), m), v) in params.into_iter().zip(&grads.tensors).zip(&mut self.first_moment).zip(&mut self.second_moment) {
            for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
