use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Real;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "slope")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn forward<F: Real>(&self, x: &Array2<F>) -> Array2<F> {
        match *self {
            Activation::Relu => x.mapv(|v| if v > F::zero() { v } else { F::zero() }),
            Activation::LeakyRelu(s) => {
                let s = F::lit(s);
                x.mapv(|v| if v > F::zero() { v } else { v * s })
            }
            Activation::Tanh => x.mapv(|v| v.tanh()),
            Activation::Sigmoid => x.mapv(|v| F::one() / (F::one() + (-v).exp())),
        }
    }

    /// `input`/`output` are the values seen in the forward pass.
    pub fn backward<F: Real>(&self, input: &Array2<F>, output: &Array2<F>, grad: &Array2<F>) -> Array2<F> {
        let mut dx = grad.clone();
        match *self {
            Activation::Relu => Zip::from(&mut dx).and(input).for_each(|d, &x| {
                if x <= F::zero() {
                    *d = F::zero();
                }
            }),
            Activation::LeakyRelu(s) => {
                let s = F::lit(s);
                Zip::from(&mut dx).and(input).for_each(|d, &x| {
                    if x <= F::zero() {
                        *d = *d * s;
                    }
                })
            }
            Activation::Tanh => Zip::from(&mut dx).and(output).for_each(|d, &y| *d = *d * (F::one() - y * y)),
            Activation::Sigmoid => Zip::from(&mut dx).and(output).for_each(|d, &y| *d = *d * y * (F::one() - y)),
        }
        dx
    }
}

/// Fully connected layer, `y = x W + b` with `W` of shape (in, out).
#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

fn uniform_fill<F: Real>(rng: &mut Rng, len: usize, bound: f64) -> Vec<F> {
    (0..len).map(|_| F::lit(rng.random_range(-bound..bound))).collect()
}

impl<F: Real> Linear<F> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = Array2::from_shape_vec((inputs, outputs), uniform_fill(rng, inputs * outputs, bound)).expect("shape");
        let bias = Array1::from(uniform_fill(rng, outputs, bound));
        Self { weight, bias }
    }

    /// Kaiming-uniform weights for a layer feeding a rectifier with the given
    /// negative slope, zero bias.
    pub fn kaiming(inputs: usize, outputs: usize, negative_slope: f64, rng: &mut Rng) -> Self {
        let gain = (2.0 / (1.0 + negative_slope * negative_slope)).sqrt();
        let bound = gain * (3.0 / inputs as f64).sqrt();
        let weight = Array2::from_shape_vec((inputs, outputs), uniform_fill(rng, inputs * outputs, bound)).expect("shape");
        Self { weight, bias: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut out = Array2::from_shape_fn((x.nrows(), self.outputs()), |(_, j)| self.bias[j]);
        general_mat_mul(F::one(), x, &self.weight, F::one(), &mut out);
        out
    }

    pub fn backward(&self, input: &Array2<F>, grad: &Array2<F>, param_grads: Option<(&mut [F], &mut [F])>, want_input: bool) -> Option<Array2<F>> {
        if let Some((gw, gb)) = param_grads {
            let mut gw = ArrayViewMut2::from_shape(self.weight.raw_dim(), gw).expect("grad shape");
            general_mat_mul(F::one(), &input.t(), grad, F::one(), &mut gw);
            for (b, s) in gb.iter_mut().zip(grad.sum_axis(Axis(0)).iter()) {
                *b = *b + *s;
            }
        }
        want_input.then(|| grad.dot(&self.weight.t()))
    }
}

/// Spatial geometry shared by convolution and its transpose. Always described
/// in the "forward convolution" direction: `(channels_in, in_h, in_w)` maps to
/// `(channels_out, out_h, out_w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.channels_in * self.kernel * self.kernel
    }

    /// Batch of planar images `(n, c*h*w)` to columns `(c*k*k, n*oh*ow)`.
    fn im2col<F: Real>(&self, x: ArrayView2<F>) -> Array2<F> {
        let (n, oh, ow) = (x.nrows(), self.out_h(), self.out_w());
        let (h, w, k) = (self.in_h, self.in_w, self.kernel);
        let mut cols = Array2::zeros((self.patch_len(), n * oh * ow));
        for s in 0..n {
            let img = x.row(s);
            for c in 0..self.channels_in {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (c * k + ky) * k + kx;
                        let mut dst = cols.row_mut(row);
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                dst[s * oh * ow + oy * ow + ox] = img[c * h * w + iy as usize * w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-add columns back to images.
    fn col2im<F: Real>(&self, cols: &Array2<F>, n: usize) -> Array2<F> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let (h, w, k) = (self.in_h, self.in_w, self.kernel);
        let mut x = Array2::zeros((n, self.channels_in * h * w));
        for s in 0..n {
            let mut img = x.row_mut(s);
            for c in 0..self.channels_in {
                for ky in 0..k {
                    for kx in 0..k {
                        let src = cols.row((c * k + ky) * k + kx);
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let dst = &mut img[c * h * w + iy as usize * w + ix as usize];
                                *dst = *dst + src[s * oh * ow + oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// `(channels, n*hw)` channel-major matrix to `(n, channels*hw)` rows.
fn channels_to_rows<F: Real>(m: &Array2<F>, n: usize, hw: usize) -> Array2<F> {
    let c = m.nrows();
    Array2::from_shape_fn((n, c * hw), |(s, j)| m[[j / hw, s * hw + j % hw]])
}

fn rows_to_channels<F: Real>(x: &Array2<F>, channels: usize, hw: usize) -> Array2<F> {
    let n = x.nrows();
    Array2::from_shape_fn((channels, n * hw), |(c, j)| x[[j / hw, c * hw + j % hw]])
}

/// 2-D convolution over planar rows `(n, cin*h*w)`; weight `(cout, cin*k*k)`.
#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    pub geometry: ConvGeometry,
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Conv2d<F> {
    pub fn new(geometry: ConvGeometry, rng: &mut Rng) -> Self {
        let fan_in = geometry.patch_len();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_vec((geometry.channels_out, fan_in), uniform_fill(rng, geometry.channels_out * fan_in, bound)).expect("shape");
        let bias = Array1::from(uniform_fill(rng, geometry.channels_out, bound));
        Self { geometry, weight, bias }
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let g = &self.geometry;
        let n = x.nrows();
        let hw = g.out_h() * g.out_w();
        let cols = g.im2col(x.view());
        let mut y = Array2::from_shape_fn((g.channels_out, n * hw), |(c, _)| self.bias[c]);
        general_mat_mul(F::one(), &self.weight, &cols, F::one(), &mut y);
        channels_to_rows(&y, n, hw)
    }

    pub fn backward(&self, input: &Array2<F>, grad: &Array2<F>, param_grads: Option<(&mut [F], &mut [F])>, want_input: bool) -> Option<Array2<F>> {
        let g = &self.geometry;
        let n = input.nrows();
        let hw = g.out_h() * g.out_w();
        let dy = rows_to_channels(grad, g.channels_out, hw);
        if let Some((gw, gb)) = param_grads {
            let cols = g.im2col(input.view());
            let mut gw = ArrayViewMut2::from_shape(self.weight.raw_dim(), gw).expect("grad shape");
            general_mat_mul(F::one(), &dy, &cols.t(), F::one(), &mut gw);
            for (b, s) in gb.iter_mut().zip(dy.sum_axis(Axis(1)).iter()) {
                *b = *b + *s;
            }
        }
        want_input.then(|| {
            let dcols = self.weight.t().dot(&dy);
            g.col2im(&dcols, n)
        })
    }
}

/// Transposed convolution (learned upsampling). `geometry` describes the
/// matching forward convolution from the *output* `(cout, oh, ow)` back to the
/// *input* `(cin, ih, iw)`, so `geometry.channels_in` is this layer's output
/// channel count. Weight `(cin, cout*k*k)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<F> {
    pub geometry: ConvGeometry,
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> ConvTranspose2d<F> {
    /// Upsampling layer from `(cin, ih, iw)` with the given kernel/stride/padding.
    pub fn new(cin: usize, cout: usize, ih: usize, iw: usize, kernel: usize, stride: usize, padding: usize, rng: &mut Rng) -> Self {
        let geometry = ConvGeometry {
            channels_in: cout,
            channels_out: cin,
            kernel,
            stride,
            padding,
            in_h: (ih - 1) * stride + kernel - 2 * padding,
            in_w: (iw - 1) * stride + kernel - 2 * padding,
        };
        debug_assert_eq!(geometry.out_h(), ih);
        let fan_in = cin * kernel * kernel / (stride * stride).max(1);
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let len = cin * cout * kernel * kernel;
        let weight = Array2::from_shape_vec((cin, cout * kernel * kernel), uniform_fill(rng, len, bound)).expect("shape");
        let bias = Array1::from(uniform_fill(rng, cout, bound));
        Self { geometry, weight, bias }
    }

    pub fn out_channels(&self) -> usize {
        self.geometry.channels_in
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (self.geometry.in_h, self.geometry.in_w)
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let g = &self.geometry;
        let n = x.nrows();
        let in_hw = g.out_h() * g.out_w();
        let xr = rows_to_channels(x, g.channels_out, in_hw);
        let cols = self.weight.t().dot(&xr);
        let mut y = g.col2im(&cols, n);
        let ohw = g.in_h * g.in_w;
        for mut row in y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v + self.bias[j / ohw];
            }
        }
        y
    }

    pub fn backward(&self, input: &Array2<F>, grad: &Array2<F>, param_grads: Option<(&mut [F], &mut [F])>, want_input: bool) -> Option<Array2<F>> {
        let g = &self.geometry;
        let n = input.nrows();
        let in_hw = g.out_h() * g.out_w();
        let dcols = g.im2col(grad.view());
        if let Some((gw, gb)) = param_grads {
            let xr = rows_to_channels(input, g.channels_out, in_hw);
            let mut gw = ArrayViewMut2::from_shape(self.weight.raw_dim(), gw).expect("grad shape");
            general_mat_mul(F::one(), &xr, &dcols.t(), F::one(), &mut gw);
            let ohw = g.in_h * g.in_w;
            for row in grad.rows() {
                for (j, v) in row.iter().enumerate() {
                    gb[j / ohw] = gb[j / ohw] + *v;
                }
            }
        }
        want_input.then(|| {
            let dx = self.weight.dot(&dcols);
            channels_to_rows(&dx, n, in_hw)
        })
    }
}

#[derive(Debug, Clone)]
pub enum Layer<F> {
    Linear(Linear<F>),
    Conv2d(Conv2d<F>),
    ConvTranspose2d(ConvTranspose2d<F>),
    Activation(Activation),
}

impl<F: Real> Layer<F> {
    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        match self {
            Layer::Linear(l) => l.forward(x),
            Layer::Conv2d(l) => l.forward(x),
            Layer::ConvTranspose2d(l) => l.forward(x),
            Layer::Activation(a) => a.forward(x),
        }
    }

    pub fn param_tensor_count(&self) -> usize {
        match self {
            Layer::Activation(_) => 0,
            _ => 2,
        }
    }

    pub fn params(&self) -> Option<(&Array2<F>, &Array1<F>)> {
        match self {
            Layer::Linear(l) => Some((&l.weight, &l.bias)),
            Layer::Conv2d(l) => Some((&l.weight, &l.bias)),
            Layer::ConvTranspose2d(l) => Some((&l.weight, &l.bias)),
            Layer::Activation(_) => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Array2<F>, &mut Array1<F>)> {
        match self {
            Layer::Linear(l) => Some((&mut l.weight, &mut l.bias)),
            Layer::Conv2d(l) => Some((&mut l.weight, &mut l.bias)),
            Layer::ConvTranspose2d(l) => Some((&mut l.weight, &mut l.bias)),
            Layer::Activation(_) => None,
        }
    }

    pub fn backward(
        &self,
        input: &Array2<F>,
        output: &Array2<F>,
        grad: &Array2<F>,
        param_grads: Option<(&mut [F], &mut [F])>,
        want_input: bool,
    ) -> Option<Array2<F>> {
        match self {
            Layer::Linear(l) => l.backward(input, grad, param_grads, want_input),
            Layer::Conv2d(l) => l.backward(input, grad, param_grads, want_input),
            Layer::ConvTranspose2d(l) => l.backward(input, grad, param_grads, want_input),
            Layer::Activation(a) => want_input.then(|| a.backward(input, output, grad)),
        }
    }
}
