//! Generator and discriminator/classifier objectives.
//!
//! Each loss returns its value split into the adversarial (real/fake) part
//! and the classification part, together with the gradient of the weighted
//! total with respect to the network outputs (scores and logits). Parameter
//! gradients are obtained by feeding those into the model's backward pass.
//!
//! Per-sample weights only scale a sample's contribution; averages always
//! divide by the sample count, so every term is exactly linear in a weight.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AcGan, ClassMask, Critic, Gradients, LatentBatch, Real};

/// Added inside the logarithms of sigmoid probabilities.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AdversarialMode {
    /// Standard GAN log-loss (non-saturating for the generator).
    #[default]
    CrossEntropy,
    /// Raw expectation of scores: `E[D(fake)] - E[D(real)]` for the critic,
    /// `-E[D(fake)]` for the generator.
    Critic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub adversarial: f64,
    pub classification: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { adversarial: 1.0, classification: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<F> {
    pub l_ft: F,
    pub l_c: F,
    pub total: F,
    /// Weight applied to each classified sample (1 for plain data, λ_mem for
    /// buffer samples, 0 for samples excluded from the term).
    pub sample_weights: Vec<F>,
    /// Weighted per-sample classification contributions; `l_c` is their sum
    /// divided by the sample count.
    pub class_terms: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct GeneratorLossGrad<F> {
    pub d_scores: Array1<F>,
    pub d_logits: Option<Array2<F>>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorLossGrad<F> {
    pub d_fake: Array1<F>,
    pub d_real: Array1<F>,
    pub d_logits_real: Option<Array2<F>>,
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `(-log(σ(s)+ε), d/ds)`: the "label this real" term.
fn real_term<F: Real>(s: F) -> (F, F) {
    let eps = F::lit(LOG_EPS);
    let p = sigmoid(s);
    (-(p + eps).ln(), -p * (F::one() - p) / (p + eps))
}

/// `(-log(1-σ(s)+ε), d/ds)`: the "label this fake" term.
fn fake_term<F: Real>(s: F) -> (F, F) {
    let eps = F::lit(LOG_EPS);
    let p = sigmoid(s);
    (-(F::one() - p + eps).ln(), p * (F::one() - p) / (F::one() - p + eps))
}

/// Masked softmax cross-entropy, computed as log-softmax. Returns per-sample weighted losses (not yet
/// averaged) and their gradients with respect to the logits.
pub fn classification_terms<F: Real>(logits: ArrayView2<F>, labels: &[usize], weights: &[F], mask: &ClassMask) -> Result<(Vec<F>, Array2<F>)> {
    let n = logits.nrows();
    if labels.len() != n || weights.len() != n {
        return Err(Error::contract(format!("{n} logit rows, {} labels, {} weights", labels.len(), weights.len())));
    }
    if logits.ncols() != mask.capacity() {
        return Err(Error::contract(format!("{} logit columns for a {}-class mask", logits.ncols(), mask.capacity())));
    }
    let mut terms = Vec::with_capacity(n);
    let mut grad = Array2::zeros(logits.raw_dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let y = labels[i];
        if !mask.is_active(y) {
            return Err(Error::contract(format!("label {y} is not an active class")));
        }
        let max = row.iter().enumerate().filter(|(c, _)| mask.is_active(*c)).map(|(_, &v)| v).fold(F::neg_infinity(), F::max);
        let mut probs = vec![F::zero(); row.len()];
        let mut z = F::zero();
        for (c, &v) in row.iter().enumerate() {
            if mask.is_active(c) {
                probs[c] = (v - max).exp();
                z = z + probs[c];
            }
        }
        for p in &mut probs {
            *p = *p / z;
        }
        let w = weights[i];
        // log-softmax form: -log p_y = ln z - (z_y - max)
        terms.push(w * (z.ln() - (row[y] - max)));
        for (c, &p) in probs.iter().enumerate() {
            if mask.is_active(c) {
                let delta = if c == y { F::one() } else { F::zero() };
                grad[[i, c]] = w * (p - delta);
            }
        }
    }
    Ok((terms, grad))
}

/// Mean classification loss and its logit gradient.
pub fn classification_loss<F: Real>(logits: ArrayView2<F>, labels: &[usize], weights: Option<&[F]>, mask: &ClassMask) -> Result<(F, Array2<F>)> {
    let n = logits.nrows();
    let ones = vec![F::one(); n];
    let (terms, mut grad) = classification_terms(logits, labels, weights.unwrap_or(&ones), mask)?;
    if n == 0 {
        return Ok((F::zero(), grad));
    }
    let inv = F::one() / F::lit(n as f64);
    grad.mapv_inplace(|g| g * inv);
    Ok((terms.into_iter().sum::<F>() * inv, grad))
}

pub fn generator_loss<F: Real>(
    d_out_fake: ArrayView1<F>,
    c_out_fake: Option<ArrayView2<F>>,
    cond_labels: &[usize],
    mask: &ClassMask,
    mode: AdversarialMode,
    weights: LossWeights,
) -> Result<(LossBreakdown<F>, GeneratorLossGrad<F>)> {
    let n = d_out_fake.len();
    if n == 0 {
        return Err(Error::contract("generator loss over an empty batch"));
    }
    let inv = F::one() / F::lit(n as f64);
    let wa = F::lit(weights.adversarial);
    let wc = F::lit(weights.classification);
    let mut l_ft = F::zero();
    let mut d_scores = Array1::zeros(n);
    for (i, &s) in d_out_fake.iter().enumerate() {
        let (v, g) = match mode {
            AdversarialMode::CrossEntropy => real_term(s),
            AdversarialMode::Critic => (-s, -F::one()),
        };
        l_ft = l_ft + v * inv;
        d_scores[i] = g * inv * wa;
    }
    let (l_c, class_terms, d_logits) = match c_out_fake {
        Some(logits) => {
            if logits.nrows() != n {
                return Err(Error::contract(format!("{} logit rows for {n} scores", logits.nrows())));
            }
            let ones = vec![F::one(); n];
            let (terms, mut grad) = classification_terms(logits, cond_labels, &ones, mask)?;
            grad.mapv_inplace(|g| g * inv * wc);
            (terms.iter().copied().sum::<F>() * inv, terms, Some(grad))
        }
        None => (F::zero(), Vec::new(), None),
    };
    let breakdown = LossBreakdown { l_ft, l_c, total: wa * l_ft + wc * l_c, sample_weights: vec![F::one(); class_terms.len()], class_terms };
    Ok((breakdown, GeneratorLossGrad { d_scores, d_logits }))
}

/// Discriminator/classifier objective. `real_weights` scales each real
/// sample in both the adversarial and the classification term.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_loss<F: Real>(
    d_out_fake: ArrayView1<F>,
    d_out_real: ArrayView1<F>,
    c_out_real: Option<ArrayView2<F>>,
    real_labels: &[usize],
    real_weights: Option<&[F]>,
    mask: &ClassMask,
    mode: AdversarialMode,
    weights: LossWeights,
) -> Result<(LossBreakdown<F>, DiscriminatorLossGrad<F>)> {
    let nr = d_out_real.len();
    let nf = d_out_fake.len();
    if nr == 0 {
        return Err(Error::contract("discriminator loss needs at least one real sample"));
    }
    let ones = vec![F::one(); nr];
    let sample_weights = real_weights.unwrap_or(&ones);
    if sample_weights.len() != nr {
        return Err(Error::contract(format!("{} weights for {nr} real samples", sample_weights.len())));
    }
    if let Some(logits) = c_out_real {
        if logits.nrows() != nr || real_labels.len() != nr {
            return Err(Error::contract(format!("batch size mismatch: {nr} real scores, {} logit rows, {} labels", logits.nrows(), real_labels.len())));
        }
    }
    let wa = F::lit(weights.adversarial);
    let wc = F::lit(weights.classification);
    let inv_r = F::one() / F::lit(nr as f64);
    let inv_f = if nf > 0 { F::one() / F::lit(nf as f64) } else { F::zero() };

    let mut l_ft = F::zero();
    let mut d_fake = Array1::zeros(nf);
    for (i, &s) in d_out_fake.iter().enumerate() {
        let (v, g) = match mode {
            AdversarialMode::CrossEntropy => fake_term(s),
            AdversarialMode::Critic => (s, F::one()),
        };
        l_ft = l_ft + v * inv_f;
        d_fake[i] = g * inv_f * wa;
    }
    let mut d_real = Array1::zeros(nr);
    for (i, &s) in d_out_real.iter().enumerate() {
        let (v, g) = match mode {
            AdversarialMode::CrossEntropy => real_term(s),
            AdversarialMode::Critic => (-s, -F::one()),
        };
        let w = sample_weights[i];
        l_ft = l_ft + w * v * inv_r;
        d_real[i] = w * g * inv_r * wa;
    }
    let (l_c, class_terms, d_logits_real) = match c_out_real {
        Some(logits) => {
            let (terms, mut grad) = classification_terms(logits, real_labels, sample_weights, mask)?;
            grad.mapv_inplace(|g| g * inv_r * wc);
            (terms.iter().copied().sum::<F>() * inv_r, terms, Some(grad))
        }
        None => (F::zero(), Vec::new(), None),
    };
    let breakdown = LossBreakdown { l_ft, l_c, total: wa * l_ft + wc * l_c, sample_weights: sample_weights.to_vec(), class_terms };
    Ok((breakdown, DiscriminatorLossGrad { d_fake, d_real, d_logits_real }))
}

/// Everything one optimisation step of the AC-GAN consumes: the "real" side
/// of the extended set (new data, replay treated as data, buffer samples
/// with their weights) and latent draws for the fake side.
#[derive(Debug, Clone)]
pub struct ObjectiveBatch<F> {
    pub real: Array2<F>,
    pub real_labels: Vec<usize>,
    pub real_weights: Vec<F>,
    /// Rows of `real` that enter the adversarial real term with their weight;
    /// rows set to `false` only feed the classification term.
    pub adversarial_rows: Vec<bool>,
    pub fake: LatentBatch<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSettings {
    pub mode: AdversarialMode,
    pub weights: LossWeights,
    /// Generator-side weights; the shared `weights` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_weights: Option<LossWeights>,
    /// Gradient-penalty weight; only used in critic mode.
    pub gradient_penalty: f64,
}

impl ObjectiveSettings {
    pub fn generator_weights(&self) -> LossWeights {
        self.generator_weights.unwrap_or(self.weights)
    }
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        Self { mode: AdversarialMode::CrossEntropy, weights: LossWeights::default(), generator_weights: None, gradient_penalty: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveOutput<F> {
    pub generator: LossBreakdown<F>,
    pub discriminator: LossBreakdown<F>,
    pub generator_grads: Gradients<F>,
    pub discriminator_grads: Gradients<F>,
}

/// Discriminator/classifier loss on an extended batch and its parameter gradients.
pub fn discriminator_objective<F: Real>(model: &AcGan<F>, batch: &ObjectiveBatch<F>, mask: &ClassMask, settings: &ObjectiveSettings) -> Result<(LossBreakdown<F>, Gradients<F>)> {
    if batch.real.nrows() == 0 {
        return Err(Error::contract("empty extended batch"));
    }
    if batch.real_weights.len() != batch.real.nrows() || batch.adversarial_rows.len() != batch.real.nrows() {
        return Err(Error::contract("one weight and one adversarial flag per real row required"));
    }
    let fake_images = model.generate(&batch.fake, mask)?;
    let critic = &model.critic;
    let real_trace = critic.forward_trace(&batch.real);
    let fake_trace = critic.forward_trace(&fake_images);
    let real_out = real_trace.output();
    let fake_out = fake_trace.output();
    let real_scores = real_out.scores.as_ref().ok_or_else(|| Error::contract("critic has no real/fake head"))?;
    let fake_scores = fake_out.scores.as_ref().expect("same critic");

    // adversarial real term only over the flagged rows; classification over all
    let adv_idx: Vec<usize> = (0..batch.real.nrows()).filter(|&i| batch.adversarial_rows[i]).collect();
    let adv_scores = Array1::from_iter(adv_idx.iter().map(|&i| real_scores[i]));
    let adv_weights: Vec<F> = adv_idx.iter().map(|&i| batch.real_weights[i]).collect();
    let (adv, adv_grad) = if adv_idx.is_empty() {
        (None, None)
    } else {
        let (b, g) = discriminator_loss(fake_scores.view(), adv_scores.view(), None, &[], Some(&adv_weights), mask, settings.mode, settings.weights)?;
        (Some(b), Some(g))
    };
    let (l_c, class_terms, d_logits) = match real_out.logits.as_ref() {
        Some(logits) => {
            let (terms, mut grad) = classification_terms(logits.view(), &batch.real_labels, &batch.real_weights, mask)?;
            let inv = F::one() / F::lit(batch.real.nrows() as f64);
            grad.mapv_inplace(|g| g * inv * F::lit(settings.weights.classification));
            (terms.iter().copied().sum::<F>() * inv, terms, Some(grad))
        }
        None => (F::zero(), Vec::new(), None),
    };

    let mut d_real = Array1::zeros(batch.real.nrows());
    if let Some(g) = &adv_grad {
        for (k, &i) in adv_idx.iter().enumerate() {
            d_real[i] = g.d_real[k];
        }
    }
    let mut grads = critic.zero_grads();
    critic.backward(&real_trace, Some(&d_real), d_logits.as_ref(), Some(&mut grads), false);
    if let Some(g) = &adv_grad {
        critic.backward(&fake_trace, Some(&g.d_fake), None, Some(&mut grads), false);
    }
    let l_ft = adv.as_ref().map_or(F::zero(), |b| b.l_ft);
    let mut total = F::lit(settings.weights.adversarial) * l_ft + F::lit(settings.weights.classification) * l_c;
    if settings.mode == AdversarialMode::Critic && settings.gradient_penalty > 0.0 {
        let (penalty, pg) = gradient_penalty(critic, &batch.real, &fake_images, settings.gradient_penalty)?;
        total = total + penalty;
        grads.add_assign(&pg);
    }
    let breakdown = LossBreakdown { l_ft, l_c, total, sample_weights: batch.real_weights.clone(), class_terms };
    Ok((breakdown, grads))
}

/// Generator loss for fresh latent draws and its parameter gradients.
pub fn generator_objective<F: Real>(model: &AcGan<F>, fake: &LatentBatch<F>, mask: &ClassMask, settings: &ObjectiveSettings) -> Result<(LossBreakdown<F>, Gradients<F>)> {
    let g_trace = model.generator.generate_trace(fake, mask)?;
    let c_trace = model.critic.forward_trace(g_trace.output());
    let out = c_trace.output();
    let scores = out.scores.as_ref().ok_or_else(|| Error::contract("critic has no real/fake head"))?;
    let logits = if model.generator.is_conditional() { out.logits.as_ref().map(|l| l.view()) } else { None };
    let (breakdown, g) = generator_loss(scores.view(), logits, &fake.labels, mask, settings.mode, settings.generator_weights())?;
    let d_images = model.critic.backward(&c_trace, Some(&g.d_scores), g.d_logits.as_ref(), None, true).expect("input grad requested");
    let mut grads = model.generator.zero_grads();
    model.generator.net.backward(&g_trace, d_images, Some(&mut grads.tensors), false);
    Ok((breakdown, grads))
}

/// Both objectives evaluated at the current parameters.
pub fn task_objective<F: Real>(model: &AcGan<F>, batch: &ObjectiveBatch<F>, mask: &ClassMask, settings: &ObjectiveSettings) -> Result<ObjectiveOutput<F>> {
    let (discriminator, discriminator_grads) = discriminator_objective(model, batch, mask, settings)?;
    let (generator, generator_grads) = generator_objective(model, &batch.fake, mask, settings)?;
    Ok(ObjectiveOutput { generator, discriminator, generator_grads, discriminator_grads })
}

/// Two-sided gradient penalty `λ E[(‖∇ₓD(x̂)‖ - 1)²]` on midpoints between
/// paired real and fake rows.
///
/// The parameter gradient needs a mixed second derivative. With
/// `u = ∂P/∂(∇ₓD)` held fixed, `∇θ P = ∂/∂h ∇θ Σ D(x̂ + h u)` at `h = 0`, which
/// is taken by a central difference of two ordinary backward passes.
pub fn gradient_penalty<F: Real>(critic: &Critic<F>, real: &Array2<F>, fake: &Array2<F>, weight: f64) -> Result<(F, Gradients<F>)> {
    let m = real.nrows().min(fake.nrows());
    if m == 0 {
        return Ok((F::zero(), critic.zero_grads()));
    }
    let half = F::lit(0.5);
    let mid = Array2::from_shape_fn((m, real.ncols()), |(i, j)| half * real[[i, j]] + half * fake[[i, j]]);
    let ones = Array1::from_elem(m, F::one());
    let trace = critic.forward_trace(&mid);
    let grad_x = critic.backward(&trace, Some(&ones), None, None, true).expect("input grad requested");
    let lambda = F::lit(weight);
    let inv_m = F::one() / F::lit(m as f64);
    let mut penalty = F::zero();
    let mut u = Array2::zeros(grad_x.raw_dim());
    for (i, row) in grad_x.rows().into_iter().enumerate() {
        let norm = row.iter().fold(F::zero(), |a, &v| a + v * v).sqrt();
        penalty = penalty + lambda * inv_m * (norm - F::one()) * (norm - F::one());
        if norm > F::zero() {
            let coef = F::lit(2.0) * lambda * inv_m * (norm - F::one()) / norm;
            u.row_mut(i).assign(&row.mapv(|v| v * coef));
        }
    }
    let scale = u.iter().fold(F::zero(), |a, &v| a.max(v.abs()));
    if scale == F::zero() {
        return Ok((penalty, critic.zero_grads()));
    }
    let h = F::lit(1e-3) / scale;
    let param_grad_at = |x: Array2<F>| {
        let t = critic.forward_trace(&x);
        let mut g = critic.zero_grads();
        critic.backward(&t, Some(&ones), None, Some(&mut g), false);
        g
    };
    let mut plus = param_grad_at(&mid + &u.mapv(|v| v * h));
    let minus = param_grad_at(&mid - &u.mapv(|v| v * h));
    for (p, q) in plus.tensors.iter_mut().zip(&minus.tensors) {
        p.zip_mut_with(q, |a, &b| *a = *a - b);
    }
    plus.scale(F::one() / (F::lit(2.0) * h));
    Ok((penalty, plus))
}
