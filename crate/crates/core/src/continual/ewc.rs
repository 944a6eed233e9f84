use ndarray::{Array1, Array2, Axis};

use crate::error::Result;
use crate::losses::classification_loss;
use crate::nn::{ClassMask, Critic, Gradients};

/// Online EWC state: summed diagonal Fisher estimates of every finished task
/// and the parameters at the last boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherState {
    pub fisher: Vec<Array1<f32>>,
    pub anchor: Vec<Array1<f32>>,
    pub lambda: f64,
}

impl FisherState {
    pub fn new(lambda: f64, critic: &Critic<f32>) -> Self {
        let sizes = critic.param_sizes();
        Self {
            fisher: sizes.iter().map(|&n| Array1::zeros(n)).collect(),
            anchor: critic.param_slices().iter().map(|s| Array1::from(s.to_vec())).collect(),
            lambda,
        }
    }

    /// `λ Σ F_i (θ_i - θ*_i)^2`.
    pub fn penalty(&self, params: &[&[f32]]) -> f64 {
        let mut total = 0.0;
        for ((p, f), a) in params.iter().zip(&self.fisher).zip(&self.anchor) {
            for ((&p, &f), &a) in p.iter().zip(f).zip(a) {
                let d = f64::from(p) - f64::from(a);
                total += f64::from(f) * d * d;
            }
        }
        self.lambda * total
    }

    /// Adds `2 λ F (θ - θ*)` to `grads`.
    pub fn add_gradient(&self, params: &[&[f32]], grads: &mut Gradients<f32>) {
        let two_lambda = (2.0 * self.lambda) as f32;
        for (((p, f), a), g) in params.iter().zip(&self.fisher).zip(&self.anchor).zip(grads.tensors.iter_mut()) {
            for (i, gi) in g.iter_mut().enumerate() {
                *gi += two_lambda * f[i] * (p[i] - a[i]);
            }
        }
    }

    /// Adds a new Fisher estimate and moves the anchor to the current parameters.
    pub fn consolidate(&mut self, critic: &Critic<f32>, estimate: &[Array1<f32>]) {
        for (f, e) in self.fisher.iter_mut().zip(estimate) {
            *f += e;
        }
        self.anchor = critic.param_slices().iter().map(|s| Array1::from(s.to_vec())).collect();
    }
}

/// Empirical diagonal Fisher: mean over samples of the squared gradient of
/// the log-likelihood of each sample's label.
pub fn estimate_fisher(critic: &Critic<f32>, x: &Array2<f32>, labels: &[usize], mask: &ClassMask) -> Result<Vec<Array1<f32>>> {
    let mut acc: Vec<Array1<f32>> = critic.param_sizes().iter().map(|&n| Array1::zeros(n)).collect();
    let n = x.nrows();
    for i in 0..n {
        let row = x.index_axis(Axis(0), i).insert_axis(Axis(0)).to_owned();
        let trace = critic.forward_trace(&row);
        let logits = trace.output().logits.expect("classifier head");
        let (_, d_logits) = classification_loss(logits.view(), &labels[i..=i], None, mask)?;
        let mut g = critic.zero_grads();
        critic.backward(&trace, None, Some(&d_logits), Some(&mut g), false);
        for (a, t) in acc.iter_mut().zip(&g.tensors) {
            a.zip_mut_with(t, |a, &v| *a += v * v);
        }
    }
    if n > 0 {
        let inv = 1.0 / n as f32;
        for a in &mut acc {
            a.mapv_inplace(|v| v * inv);
        }
    }
    Ok(acc)
}
