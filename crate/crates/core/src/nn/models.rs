use std::sync::Arc;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Conv2d, ConvGeometry, ConvTranspose2d, Layer, Linear};
use super::network::{Gradients, Sequential, Trace};
use super::optim::{Adam, AdamConfig};
use super::{ClassMask, Real};
use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::rng::{Rng, SeedTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Fully connected generator and trunk; the desk-scale choice.
    Mlp { generator_hidden: Vec<usize>, critic_hidden: Vec<usize>, leaky_slope: f64 },
    /// Transposed-convolution generator and strided-convolution trunk.
    /// Channel counts halve (generator) or double (trunk) at every stage.
    Conv { generator_channels: usize, critic_channels: usize, leaky_slope: f64 },
}

impl Architecture {
    pub fn mlp_default() -> Self {
        Architecture::Mlp { generator_hidden: vec![256, 512], critic_hidden: vec![512, 256], leaky_slope: 0.2 }
    }

    pub fn conv_default() -> Self {
        Architecture::Conv { generator_channels: 320, critic_channels: 64, leaky_slope: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_shape: ImageShape,
    pub latent_dim: usize,
    /// Total class capacity; every class node exists from the start.
    pub num_classes: usize,
    pub arch: Architecture,
    #[serde(default = "AdamConfig::gan")]
    pub generator_optimizer: AdamConfig,
    #[serde(default = "AdamConfig::gan")]
    pub critic_optimizer: AdamConfig,
}

impl Default for ModelConfig {
    /// 32x32 RGB, 100-d latent, 10 classes, convolutional (~1.6M generator parameters).
    fn default() -> Self {
        Self {
            image_shape: ImageShape::new(32, 32, 3),
            latent_dim: 100,
            num_classes: 10,
            arch: Architecture::conv_default(),
            generator_optimizer: AdamConfig::gan(),
            critic_optimizer: AdamConfig::gan(),
        }
    }
}

impl ModelConfig {
    pub fn mlp(image_shape: ImageShape, num_classes: usize) -> Self {
        Self { image_shape, num_classes, arch: Architecture::mlp_default(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config_at("model.latent_dim", "latent dimension must be positive"));
        }
        if self.num_classes == 0 {
            return Err(Error::config_at("model.num_classes", "need at least one class"));
        }
        if self.image_shape.len() == 0 {
            return Err(Error::config_at("model.image_shape", "empty image shape"));
        }
        match &self.arch {
            Architecture::Mlp { generator_hidden, critic_hidden, .. } => {
                if generator_hidden.iter().chain(critic_hidden).any(|&h| h == 0) {
                    return Err(Error::config_at("model.arch", "hidden widths must be positive"));
                }
            }
            Architecture::Conv { generator_channels, critic_channels, .. } => {
                conv_stages(self.image_shape)?;
                let stages = conv_stages(self.image_shape)?.0;
                if *generator_channels >> (stages - 1) == 0 || *critic_channels == 0 {
                    return Err(Error::config_at("model.arch", "channel widths too small for the number of stages"));
                }
            }
        }
        Ok(())
    }
}

/// Number of stride-2 stages and the starting spatial size for a square image.
fn conv_stages(shape: ImageShape) -> Result<(usize, usize)> {
    if shape.height != shape.width || shape.height % 4 != 0 {
        return Err(Error::config_at(
            "model.image_shape",
            format!("convolutional architecture needs a square image with side divisible by 4, got {}x{}", shape.height, shape.width),
        ));
    }
    let side = shape.height;
    let stages = if side % 8 == 0 && side / 8 >= 3 { 3 } else { 2 };
    Ok((stages, side >> stages))
}

/// A batch of latent draws: noise from the uniform prior plus conditioning classes.
#[derive(Debug, Clone)]
pub struct LatentBatch<F> {
    pub z: Array2<F>,
    pub labels: Vec<usize>,
}

impl<F: Real> LatentBatch<F> {
    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `z ~ U[-1, 1]^dim`, labels uniform over `classes`.
    pub fn sample(rng: &mut Rng, n: usize, latent_dim: usize, classes: &[usize]) -> Self {
        let z = Array2::from_shape_fn((n, latent_dim), |_| F::lit(rng.random_range(-1.0..=1.0)));
        let labels = if classes.is_empty() { vec![0; n] } else { (0..n).map(|_| classes[rng.random_range(0..classes.len())]).collect() };
        Self { z, labels }
    }

    pub fn with_labels(rng: &mut Rng, latent_dim: usize, labels: Vec<usize>) -> Self {
        let z = Array2::from_shape_fn((labels.len(), latent_dim), |_| F::lit(rng.random_range(-1.0..=1.0)));
        Self { z, labels }
    }
}

#[derive(Debug, Clone)]
pub struct Generator<F> {
    pub net: Sequential<F>,
    pub latent_dim: usize,
    /// Width of the one-hot conditioning block; 0 for an unconditional generator.
    pub condition_classes: usize,
    pub image_shape: ImageShape,
}

impl<F: Real> Generator<F> {
    pub fn build(config: &ModelConfig, conditional: bool, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let cond = if conditional { config.num_classes } else { 0 };
        let input = config.latent_dim + cond;
        let shape = config.image_shape;
        let mut layers = Vec::new();
        match &config.arch {
            Architecture::Mlp { generator_hidden, .. } => {
                let mut width = input;
                for &h in generator_hidden {
                    layers.push(Layer::Linear(Linear::kaiming(width, h, 0.0, rng)));
                    layers.push(Layer::Activation(Activation::Relu));
                    width = h;
                }
                layers.push(Layer::Linear(Linear::new(width, shape.len(), rng)));
            }
            Architecture::Conv { generator_channels, .. } => {
                let (stages, start) = conv_stages(shape)?;
                layers.push(Layer::Linear(Linear::new(input, generator_channels * start * start, rng)));
                layers.push(Layer::Activation(Activation::Relu));
                let mut ch = *generator_channels;
                let mut side = start;
                for stage in 0..stages {
                    let last = stage + 1 == stages;
                    let out = if last { shape.channels } else { ch / 2 };
                    let up = ConvTranspose2d::new(ch, out, side, side, 4, 2, 1, rng);
                    side = up.out_hw().0;
                    layers.push(Layer::ConvTranspose2d(up));
                    if !last {
                        layers.push(Layer::Activation(Activation::Relu));
                    }
                    ch = out;
                }
            }
        }
        layers.push(Layer::Activation(Activation::Tanh));
        Ok(Self { net: Sequential::new(layers), latent_dim: config.latent_dim, condition_classes: cond, image_shape: shape })
    }

    pub fn is_conditional(&self) -> bool {
        self.condition_classes > 0
    }

    pub fn input(&self, draws: &LatentBatch<F>) -> Array2<F> {
        let n = draws.len();
        let mut x = Array2::zeros((n, self.latent_dim + self.condition_classes));
        x.slice_mut(s![.., ..self.latent_dim]).assign(&draws.z);
        if self.is_conditional() {
            for (i, &c) in draws.labels.iter().enumerate() {
                x[[i, self.latent_dim + c]] = F::one();
            }
        }
        x
    }

    fn check(&self, draws: &LatentBatch<F>, active: Option<&ClassMask>) -> Result<()> {
        if draws.z.ncols() != self.latent_dim {
            return Err(Error::contract(format!("latent width {} != {}", draws.z.ncols(), self.latent_dim)));
        }
        if self.is_conditional() {
            if draws.labels.len() != draws.len() {
                return Err(Error::contract("one conditioning label per draw required"));
            }
            for &c in &draws.labels {
                if c >= self.condition_classes {
                    return Err(Error::contract(format!("class {c} outside capacity {}", self.condition_classes)));
                }
                if let Some(mask) = active {
                    if !mask.is_active(c) {
                        return Err(Error::contract(format!("class {c} is not active")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Images in `[-1, 1]`, one planar row per draw. Conditioning classes must be active.
    pub fn generate(&self, draws: &LatentBatch<F>, active: &ClassMask) -> Result<Array2<F>> {
        self.check(draws, Some(active))?;
        Ok(self.net.forward(&self.input(draws)))
    }

    pub fn generate_trace(&self, draws: &LatentBatch<F>, active: &ClassMask) -> Result<Trace<F>> {
        self.check(draws, Some(active))?;
        Ok(self.net.forward_trace(&self.input(draws)))
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn zero_grads(&self) -> Gradients<F> {
        Gradients::zeros(&self.net.param_sizes())
    }
}

/// Shared trunk with an optional real/fake head and an optional class head.
#[derive(Debug, Clone)]
pub struct Critic<F> {
    pub trunk: Sequential<F>,
    pub adversarial_head: Option<Sequential<F>>,
    pub class_head: Option<Sequential<F>>,
    pub num_classes: usize,
}

#[derive(Debug, Clone)]
pub struct CriticOutput<F> {
    /// Real/fake logit per sample.
    pub scores: Option<Array1<F>>,
    /// Class logits per sample, all `num_classes` columns (masking is the caller's job).
    pub logits: Option<Array2<F>>,
}

#[derive(Debug, Clone)]
pub struct CriticTrace<F> {
    trunk: Trace<F>,
    adversarial: Option<Trace<F>>,
    class: Option<Trace<F>>,
}

impl<F: Real> CriticTrace<F> {
    pub fn output(&self) -> CriticOutput<F> {
        CriticOutput {
            scores: self.adversarial.as_ref().map(|t| t.output().column(0).to_owned()),
            logits: self.class.as_ref().map(|t| t.output().clone()),
        }
    }
}

impl<F: Real> Critic<F> {
    pub fn build(config: &ModelConfig, adversarial: bool, classify: bool, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let shape = config.image_shape;
        let mut layers = Vec::new();
        let features = match &config.arch {
            Architecture::Mlp { critic_hidden, leaky_slope, .. } => {
                let mut width = shape.len();
                for &h in critic_hidden {
                    layers.push(Layer::Linear(Linear::kaiming(width, h, f64::from(*leaky_slope), rng)));
                    layers.push(Layer::Activation(Activation::LeakyRelu(*leaky_slope)));
                    width = h;
                }
                width
            }
            Architecture::Conv { critic_channels, leaky_slope, .. } => {
                let (stages, _) = conv_stages(shape)?;
                let mut ch = shape.channels;
                let mut side = shape.height;
                for stage in 0..stages {
                    let out = critic_channels << stage;
                    let geometry = ConvGeometry { channels_in: ch, channels_out: out, kernel: 4, stride: 2, padding: 1, in_h: side, in_w: side };
                    side = geometry.out_h();
                    layers.push(Layer::Conv2d(Conv2d::new(geometry, rng)));
                    layers.push(Layer::Activation(Activation::LeakyRelu(*leaky_slope)));
                    ch = out;
                }
                ch * side * side
            }
        };
        let adversarial_head = adversarial.then(|| Sequential::new(vec![Layer::Linear(Linear::new(features, 1, rng))]));
        let class_head = classify.then(|| Sequential::new(vec![Layer::Linear(Linear::new(features, config.num_classes, rng))]));
        Ok(Self { trunk: Sequential::new(layers), adversarial_head, class_head, num_classes: config.num_classes })
    }

    pub fn forward(&self, x: &Array2<F>) -> CriticOutput<F> {
        let h = self.trunk.forward(x);
        CriticOutput {
            scores: self.adversarial_head.as_ref().map(|head| head.forward(&h).column(0).to_owned()),
            logits: self.class_head.as_ref().map(|head| head.forward(&h)),
        }
    }

    pub fn forward_trace(&self, x: &Array2<F>) -> CriticTrace<F> {
        let trunk = self.trunk.forward_trace(x);
        let h = trunk.output();
        CriticTrace {
            adversarial: self.adversarial_head.as_ref().map(|head| head.forward_trace(h)),
            class: self.class_head.as_ref().map(|head| head.forward_trace(h)),
            trunk,
        }
    }

    fn heads(&self) -> impl Iterator<Item = &Sequential<F>> {
        self.adversarial_head.iter().chain(self.class_head.iter())
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut sizes = self.trunk.param_sizes();
        for head in self.heads() {
            sizes.extend(head.param_sizes());
        }
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    pub fn param_slices(&self) -> Vec<&[F]> {
        let mut out = self.trunk.param_slices();
        for head in self.heads() {
            out.extend(head.param_slices());
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = self.trunk.param_slices_mut();
        if let Some(h) = self.adversarial_head.as_mut() {
            out.extend(h.param_slices_mut());
        }
        if let Some(h) = self.class_head.as_mut() {
            out.extend(h.param_slices_mut());
        }
        out
    }

    pub fn zero_grads(&self) -> Gradients<F> {
        Gradients::zeros(&self.param_sizes())
    }

    /// Back-propagates gradients of a loss with respect to the scores and/or
    /// logits. Parameter gradients are accumulated into `grads` when given.
    pub fn backward(
        &self,
        trace: &CriticTrace<F>,
        d_scores: Option<&Array1<F>>,
        d_logits: Option<&Array2<F>>,
        mut grads: Option<&mut Gradients<F>>,
        want_input: bool,
    ) -> Option<Array2<F>> {
        let n_trunk = self.trunk.param_tensor_count();
        let n_adv = self.adversarial_head.as_ref().map_or(0, Sequential::param_tensor_count);
        let h = trace.trunk.output();
        let mut d_h = Array2::<F>::zeros(h.raw_dim());
        if let (Some(head), Some(t), Some(ds)) = (&self.adversarial_head, &trace.adversarial, d_scores) {
            let g = ds.clone().insert_axis(Axis(1));
            let pg = grads.as_deref_mut().map(|g| &mut g.tensors[n_trunk..n_trunk + n_adv]);
            d_h += &head.backward(t, g, pg, true).expect("input grad requested");
        }
        if let (Some(head), Some(t), Some(dl)) = (&self.class_head, &trace.class, d_logits) {
            let pg = grads.as_deref_mut().map(|g| &mut g.tensors[n_trunk + n_adv..]);
            d_h += &head.backward(t, dl.clone(), pg, true).expect("input grad requested");
        }
        let pg = grads.map(|g| &mut g.tensors[..n_trunk]);
        self.trunk.backward(&trace.trunk, d_h, pg, want_input)
    }

    pub fn cast<G: Real>(&self) -> Critic<G> {
        Critic {
            trunk: self.trunk.cast(),
            adversarial_head: self.adversarial_head.as_ref().map(Sequential::cast),
            class_head: self.class_head.as_ref().map(Sequential::cast),
            num_classes: self.num_classes,
        }
    }

    /// Single-headed prediction: argmax over the active class logits.
    pub fn predict(&self, x: &Array2<F>, active: &ClassMask) -> Vec<usize> {
        let logits = self.forward(x).logits.expect("critic without class head cannot predict");
        logits.rows().into_iter().map(|row| active.argmax(row.as_slice().expect("contiguous"))).collect()
    }
}

/// Immutable generator copy; cloning shares the same frozen weights.
#[derive(Debug, Clone)]
pub struct FrozenGenerator<F>(Arc<Generator<F>>);

impl<F: Real> FrozenGenerator<F> {
    pub fn generator(&self) -> &Generator<F> {
        &self.0
    }

    pub fn generate(&self, draws: &LatentBatch<F>, active: &ClassMask) -> Result<Array2<F>> {
        self.0.generate(draws, active)
    }
}

/// Immutable classifier copy (DGR solver / EWC anchors).
#[derive(Debug, Clone)]
pub struct FrozenCritic<F>(Arc<Critic<F>>);

impl<F: Real> FrozenCritic<F> {
    pub fn critic(&self) -> &Critic<F> {
        &self.0
    }
}

/// Generator plus discriminator/classifier with their optimizer state.
///
/// The class head always has `num_classes` outputs; classes not seen yet are
/// masked out of losses and predictions rather than structurally added.
#[derive(Debug, Clone)]
pub struct AcGan<F: Real = f32> {
    pub config: ModelConfig,
    pub seed: u64,
    pub generator: Generator<F>,
    pub critic: Critic<F>,
    pub generator_opt: Adam<F>,
    pub critic_opt: Adam<F>,
    generator_snapshots: usize,
}

impl<F: Real> AcGan<F> {
    /// Conditional generator and a critic with both heads.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build_variant(config, seed, true)
    }

    /// Unconditional generator and a real/fake-only critic.
    pub fn build_unconditional(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build_variant(config, seed, false)
    }

    pub fn build_variant(config: &ModelConfig, seed: u64, conditional: bool) -> Result<Self> {
        config.validate()?;
        let seeds = SeedTree::new(seed);
        let generator = Generator::build(config, conditional, &mut seeds.rng("generator-init"))?;
        let critic = Critic::build(config, true, conditional, &mut seeds.rng("critic-init"))?;
        let generator_opt = Adam::new(config.generator_optimizer, &generator.net.param_sizes());
        let critic_opt = Adam::new(config.critic_optimizer, &critic.param_sizes());
        Ok(Self { config: config.clone(), seed, generator, critic, generator_opt, critic_opt, generator_snapshots: 0 })
    }

    pub fn generate(&self, draws: &LatentBatch<F>, active: &ClassMask) -> Result<Array2<F>> {
        self.generator.generate(draws, active)
    }

    pub fn generator_param_count(&self) -> usize {
        self.generator.param_count()
    }

    pub fn critic_param_count(&self) -> usize {
        self.critic.param_count()
    }

    /// Deep copy of the generator. Counted, so that runs can prove whether a
    /// method ever copied its generator.
    pub fn snapshot_generator(&mut self) -> FrozenGenerator<F> {
        self.generator_snapshots += 1;
        FrozenGenerator(Arc::new(self.generator.clone()))
    }

    pub fn generator_snapshots(&self) -> usize {
        self.generator_snapshots
    }

    pub fn step_critic(&mut self, grads: &Gradients<F>) {
        self.critic_opt.apply(self.critic.param_slices_mut(), grads);
    }

    pub fn step_generator(&mut self, grads: &Gradients<F>) {
        self.generator_opt.apply(self.generator.net.param_slices_mut(), grads);
    }
}

/// Stand-alone classifier: the critic trunk with only the class head
/// (one output node fewer than the AC-GAN critic).
#[derive(Debug, Clone)]
pub struct Classifier<F: Real = f32> {
    pub critic: Critic<F>,
    pub opt: Adam<F>,
    snapshots: usize,
}

impl<F: Real> Classifier<F> {
    pub fn build(config: &ModelConfig, optimizer: AdamConfig, seed: u64) -> Result<Self> {
        let critic = Critic::build(config, false, true, &mut SeedTree::new(seed).rng("classifier-init"))?;
        let opt = Adam::new(optimizer, &critic.param_sizes());
        Ok(Self { critic, opt, snapshots: 0 })
    }

    pub fn logits(&self, x: &Array2<F>) -> Array2<F> {
        self.critic.forward(x).logits.expect("class head")
    }

    pub fn snapshot(&mut self) -> FrozenCritic<F> {
        self.snapshots += 1;
        FrozenCritic(Arc::new(self.critic.clone()))
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    pub fn step(&mut self, grads: &Gradients<F>) {
        self.opt.apply(self.critic.param_slices_mut(), grads);
    }
}
