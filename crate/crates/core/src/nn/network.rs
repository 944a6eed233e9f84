use ndarray::{Array1, Array2};

use super::layers::Layer;
use super::Real;

/// Flat per-tensor gradient storage, ordered like the owning model's
/// parameter tensors (weight then bias, layer by layer).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub tensors: Vec<Array1<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self { tensors: sizes.iter().map(|&n| Array1::zeros(n)).collect() }
    }

    pub fn scale(&mut self, s: F) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * s);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<F>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn l2_norm(&self) -> F {
        self.tensors.iter().flat_map(|t| t.iter()).fold(F::zero(), |acc, &v| acc + v * v).sqrt()
    }

    pub fn flat(&self) -> Vec<F> {
        self.tensors.iter().flat_map(|t| t.iter().copied()).collect()
    }
}

/// Values recorded during a forward pass; `values[i]` is the input of layer
/// `i` and `values[len]` the network output.
#[derive(Debug, Clone)]
pub struct Trace<F> {
    pub values: Vec<Array2<F>>,
}

impl<F> Trace<F> {
    pub fn output(&self) -> &Array2<F> {
        self.values.last().expect("trace holds at least the input")
    }
}

#[derive(Debug, Clone)]
pub struct Sequential<F> {
    pub layers: Vec<Layer<F>>,
}

impl<F: Real> Sequential<F> {
    pub fn new(layers: Vec<Layer<F>>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h);
        }
        h
    }

    pub fn forward_trace(&self, x: &Array2<F>) -> Trace<F> {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(values.last().expect("nonempty"));
            values.push(next);
        }
        Trace { values }
    }

    pub fn param_tensor_count(&self) -> usize {
        self.layers.iter().map(Layer::param_tensor_count).sum()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .flat_map(|(w, b)| [w.len(), b.len()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    pub fn param_slices(&self) -> Vec<&[F]> {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .flat_map(|(w, b)| [w.as_slice().expect("standard layout"), b.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        self.layers
            .iter_mut()
            .filter_map(|l| l.params_mut())
            .flat_map(|(w, b)| [w.as_slice_mut().expect("standard layout"), b.as_slice_mut().expect("standard layout")])
            .collect()
    }

    /// Back-propagates `grad_out` through the recorded trace.
    ///
    /// When `param_grads` is given (one array per parameter tensor, in
    /// [`param_slices`](Self::param_slices) order) parameter gradients are
    /// *accumulated* into it. Returns the gradient with respect to the
    /// network input when `want_input` is set.
    pub fn backward(&self, trace: &Trace<F>, grad_out: Array2<F>, mut param_grads: Option<&mut [Array1<F>]>, want_input: bool) -> Option<Array2<F>> {
        let mut grad = grad_out;
        let mut tensor_idx = self.param_tensor_count();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let need_dx = want_input || i > 0;
            let pg = match (&mut param_grads, layer.param_tensor_count()) {
                (Some(grads), 2) => {
                    tensor_idx -= 2;
                    let (w, rest) = grads[tensor_idx..].split_at_mut(1);
                    Some((w[0].as_slice_mut().expect("contiguous"), rest[0].as_slice_mut().expect("contiguous")))
                }
                _ => None,
            };
            match layer.backward(&trace.values[i], &trace.values[i + 1], &grad, pg, need_dx) {
                Some(dx) => grad = dx,
                None => return None,
            }
        }
        Some(grad)
    }

    pub fn cast<G: Real>(&self) -> Sequential<G> {
        use super::layers::*;
        let conv = |w: &Array2<F>| w.mapv(|v| G::lit(v.to_f64().expect("finite")));
        let convb = |b: &Array1<F>| b.mapv(|v| G::lit(v.to_f64().expect("finite")));
        Sequential {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Linear(x) => Layer::Linear(Linear { weight: conv(&x.weight), bias: convb(&x.bias) }),
                    Layer::Conv2d(x) => Layer::Conv2d(Conv2d { geometry: x.geometry, weight: conv(&x.weight), bias: convb(&x.bias) }),
                    Layer::ConvTranspose2d(x) => {
                        Layer::ConvTranspose2d(ConvTranspose2d { geometry: x.geometry, weight: conv(&x.weight), bias: convb(&x.bias) })
                    }
                    Layer::Activation(a) => Layer::Activation(*a),
                })
                .collect(),
        }
    }
}
