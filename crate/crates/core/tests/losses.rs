mod common;

use std::cell::RefCell;

use clogan::data::ImageShape;
use clogan::losses::*;
use clogan::nn::*;
use clogan::rng::rng_from_seed;
use common::{numeric_grad, rel_err};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng as _;

/// Textbook formulas, written without any of the library's stabilisation.
mod oracle {
    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    pub fn masked_nll(logits: &[f64], label: usize, active: &[usize]) -> f64 {
        let z: f64 = active.iter().map(|&c| logits[c].exp()).sum();
        -(logits[label].exp() / z).ln()
    }

    pub fn d_loss_ce(fake: &[f64], real: &[f64], w: &[f64]) -> f64 {
        let f: f64 = fake.iter().map(|&s| -(1.0 - sigmoid(s) + 1e-7).ln()).sum::<f64>() / fake.len() as f64;
        let r: f64 = real.iter().zip(w).map(|(&s, &w)| -w * (sigmoid(s) + 1e-7).ln()).sum::<f64>() / real.len() as f64;
        f + r
    }

    pub fn d_loss_critic(fake: &[f64], real: &[f64], w: &[f64]) -> f64 {
        fake.iter().sum::<f64>() / fake.len() as f64 - real.iter().zip(w).map(|(s, w)| s * w).sum::<f64>() / real.len() as f64
    }
}

fn random(rows: usize, cols: usize, seed: u64, scale: f64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

#[test]
fn discriminator_loss_matches_oracle_in_both_modes() {
    let fake = [0.3, -2.0, 1.1];
    let real = [1.5, -0.2, 0.0, 4.0];
    let w = [1.0, 1.0, 2.5, 0.0];
    let logits = random(4, 5, 1, 3.0);
    let labels = [0, 2, 2, 4];
    let mask = ClassMask::from_classes(5, [0, 2, 4]);
    let lw = LossWeights { adversarial: 0.7, classification: 1.3 };
    let fa = Array1::from(fake.to_vec());
    let ra = Array1::from(real.to_vec());
    let expected_c: f64 = (0..4).map(|i| w[i] * oracle::masked_nll(logits.row(i).as_slice().unwrap(), labels[i], &[0, 2, 4])).sum::<f64>() / 4.0;
    for (mode, adv) in [(AdversarialMode::CrossEntropy, oracle::d_loss_ce(&fake, &real, &w)), (AdversarialMode::Critic, oracle::d_loss_critic(&fake, &real, &w))] {
        let (b, _) = discriminator_loss(fa.view(), ra.view(), Some(logits.view()), &labels, Some(&w), &mask, mode, lw).unwrap();
        assert!((b.l_ft - adv).abs() < 1e-12, "{mode:?}: {} vs {adv}", b.l_ft);
        assert!((b.l_c - expected_c).abs() < 1e-12);
        assert!((b.total - (0.7 * adv + 1.3 * expected_c)).abs() < 1e-12);
    }
}

#[test]
fn generator_loss_matches_oracle_in_both_modes() {
    let fake = [0.3, -2.0, 1.1];
    let logits = random(3, 4, 2, 2.0);
    let labels = [1, 3, 1];
    let mask = ClassMask::from_classes(4, [1, 3]);
    let fa = Array1::from(fake.to_vec());
    let ce: f64 = fake.iter().map(|&s| -(oracle::sigmoid(s) + 1e-7).ln()).sum::<f64>() / 3.0;
    let critic: f64 = -fake.iter().sum::<f64>() / 3.0;
    let lc: f64 = (0..3).map(|i| oracle::masked_nll(logits.row(i).as_slice().unwrap(), labels[i], &[1, 3])).sum::<f64>() / 3.0;
    for (mode, adv) in [(AdversarialMode::CrossEntropy, ce), (AdversarialMode::Critic, critic)] {
        let (b, _) = generator_loss(fa.view(), Some(logits.view()), &labels, &mask, mode, LossWeights::default()).unwrap();
        assert!((b.l_ft - adv).abs() < 1e-12);
        assert!((b.l_c - lc).abs() < 1e-12);
    }
}

#[test]
fn output_gradients_match_finite_differences() {
    let fake = Array1::from(vec![0.3, -2.0, 1.1]);
    let real = Array1::from(vec![1.5, -0.2, 0.0, 4.0]);
    let w = [1.0, 0.5, 2.5, 3.0];
    let logits = random(4, 5, 3, 3.0);
    let labels = [0, 2, 2, 4];
    let mask = ClassMask::from_classes(5, [0, 2, 4]);
    for mode in [AdversarialMode::CrossEntropy, AdversarialMode::Critic] {
        let lw = LossWeights { adversarial: 0.9, classification: 1.7 };
        let total = |f: &Array1<f64>, r: &Array1<f64>, l: &Array2<f64>| discriminator_loss(f.view(), r.view(), Some(l.view()), &labels, Some(&w), &mask, mode, lw).unwrap().0.total;
        let (_, g) = discriminator_loss(fake.view(), real.view(), Some(logits.view()), &labels, Some(&w), &mask, mode, lw).unwrap();
        let h = 1e-6;
        for i in 0..fake.len() {
            let (mut a, mut b) = (fake.clone(), fake.clone());
            a[i] += h;
            b[i] -= h;
            assert!(((total(&a, &real, &logits) - total(&b, &real, &logits)) / (2.0 * h) - g.d_fake[i]).abs() < 1e-7);
        }
        for i in 0..real.len() {
            let (mut a, mut b) = (real.clone(), real.clone());
            a[i] += h;
            b[i] -= h;
            assert!(((total(&fake, &a, &logits) - total(&fake, &b, &logits)) / (2.0 * h) - g.d_real[i]).abs() < 1e-7);
        }
        let dl = g.d_logits_real.unwrap();
        for idx in ndarray::indices_of(&logits) {
            let (mut a, mut b) = (logits.clone(), logits.clone());
            a[idx] += h;
            b[idx] -= h;
            assert!(((total(&fake, &real, &a) - total(&fake, &real, &b)) / (2.0 * h) - dl[idx]).abs() < 1e-7, "{idx:?}");
        }
    }
}

fn tiny_config() -> ModelConfig {
    let mut cfg = ModelConfig::mlp(ImageShape::new(3, 3, 1), 4);
    cfg.latent_dim = 3;
    cfg.arch = Architecture::Mlp { generator_hidden: vec![6], critic_hidden: vec![7], leaky_slope: 0.2 };
    cfg
}

fn tiny_batch(model: &AcGan<f64>, mem_weight: f64) -> ObjectiveBatch<f64> {
    let mut rng = rng_from_seed(11);
    ObjectiveBatch {
        real: random(6, 9, 12, 1.0),
        real_labels: vec![0, 1, 1, 0, 2, 0],
        real_weights: vec![1.0, 1.0, 1.0, 1.0, mem_weight, mem_weight],
        adversarial_rows: vec![true, true, true, false, true, true],
        fake: LatentBatch::with_labels(&mut rng, model.config.latent_dim, vec![0, 2, 1, 1]),
    }
}

#[test]
fn model_gradients_match_finite_differences() {
    let mask = ClassMask::from_classes(4, [0, 1, 2]);
    for mode in [AdversarialMode::CrossEntropy, AdversarialMode::Critic] {
        let settings = ObjectiveSettings { mode, weights: LossWeights { adversarial: 1.0, classification: 0.8 }, generator_weights: None, gradient_penalty: 0.0 };
        let model = AcGan::<f64>::build(&tiny_config(), 5).unwrap();
        let batch = tiny_batch(&model, 1.7);
        let out = task_objective(&model, &batch, &mask, &settings).unwrap();

        let sizes = model.critic.param_sizes();
        let cell = RefCell::new(model.clone());
        let numeric = numeric_grad(
            &sizes,
            |t, i| cell.borrow().critic.param_slices()[t][i],
            |t, i, v| cell.borrow_mut().critic.param_slices_mut()[t][i] = v,
            || discriminator_objective(&cell.borrow(), &batch, &mask, &settings).unwrap().0.total,
            1e-6,
        );
        let err = rel_err(&out.discriminator_grads.flat(), &numeric);
        assert!(err < 1e-4, "{mode:?} discriminator rel err {err}");

        let sizes = model.generator.net.param_sizes();
        let numeric = numeric_grad(
            &sizes,
            |t, i| cell.borrow().generator.net.param_slices()[t][i],
            |t, i, v| cell.borrow_mut().generator.net.param_slices_mut()[t][i] = v,
            || generator_objective(&cell.borrow(), &batch.fake, &mask, &settings).unwrap().0.total,
            1e-6,
        );
        let err = rel_err(&out.generator_grads.flat(), &numeric);
        assert!(err < 1e-4, "{mode:?} generator rel err {err}");
    }
}

#[test]
fn zero_weight_samples_contribute_no_gradient() {
    let mask = ClassMask::from_classes(4, [0, 1, 2]);
    let settings = ObjectiveSettings::default();
    let model = AcGan::<f64>::build(&tiny_config(), 6).unwrap();
    let batch = tiny_batch(&model, 0.0);
    let mut moved = batch.clone();
    for i in 4..6 {
        moved.real.row_mut(i).mapv_inplace(|v| -v + 0.3);
    }
    moved.real_labels[4] = 1;
    let (_, a) = discriminator_objective(&model, &batch, &mask, &settings).unwrap();
    let (_, b) = discriminator_objective(&model, &moved, &mask, &settings).unwrap();
    let diff: f64 = a.flat().iter().zip(b.flat()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-14, "{diff}");
}

#[test]
fn unit_weights_without_memory_equal_the_plain_losses() {
    let mask = ClassMask::from_classes(4, [0, 1, 2]);
    let settings = ObjectiveSettings::default();
    let model = AcGan::<f64>::build(&tiny_config(), 7).unwrap();
    let mut batch = tiny_batch(&model, 1.0);
    batch.adversarial_rows = vec![true; 6];
    let (b, _) = discriminator_objective(&model, &batch, &mask, &settings).unwrap();
    let fake_images = model.generate(&batch.fake, &mask).unwrap();
    let real = model.critic.forward(&batch.real);
    let fake = model.critic.forward(&fake_images);
    let (plain, _) = discriminator_loss(
        fake.scores.unwrap().view(),
        real.scores.unwrap().view(),
        Some(real.logits.as_ref().unwrap().view()),
        &batch.real_labels,
        None,
        &mask,
        AdversarialMode::CrossEntropy,
        LossWeights::default(),
    )
    .unwrap();
    assert!((b.total - plain.total).abs() < 1e-14);
}

#[test]
fn doubling_memory_weight_doubles_its_classification_terms() {
    let mask = ClassMask::from_classes(4, [0, 1, 2]);
    let settings = ObjectiveSettings::default();
    let model = AcGan::<f64>::build(&tiny_config(), 8).unwrap();
    let mut one = tiny_batch(&model, 1.0);
    one.real_weights = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
    let mut two = one.clone();
    // a four-sample memory sub-batch
    for w in &mut two.real_weights[2..] {
        *w = 2.0;
    }
    let (a, _) = discriminator_objective(&model, &one, &mask, &settings).unwrap();
    let (b, _) = discriminator_objective(&model, &two, &mask, &settings).unwrap();
    for i in 2..6 {
        assert!((b.class_terms[i] - 2.0 * a.class_terms[i]).abs() < 1e-14);
    }
    assert_eq!(a.class_terms[..2], b.class_terms[..2]);
}

#[test]
fn gradient_penalty_parameter_gradient_matches_finite_differences() {
    let mut rng = rng_from_seed(13);
    let critic = Critic::<f64> {
        trunk: Sequential::new(vec![Layer::Linear(Linear::new(4, 5, &mut rng)), Layer::Activation(Activation::Tanh)]),
        adversarial_head: Some(Sequential::new(vec![Layer::Linear(Linear::new(5, 1, &mut rng))])),
        class_head: None,
        num_classes: 1,
    };
    let real = random(3, 4, 14, 1.0);
    let fake = random(3, 4, 15, 1.0);
    let (_, g) = gradient_penalty(&critic, &real, &fake, 10.0).unwrap();
    let sizes = critic.param_sizes();
    let cell = RefCell::new(critic);
    let numeric = numeric_grad(
        &sizes,
        |t, i| cell.borrow().param_slices()[t][i],
        |t, i, v| cell.borrow_mut().param_slices_mut()[t][i] = v,
        || gradient_penalty(&cell.borrow(), &real, &fake, 10.0).unwrap().0,
        1e-6,
    );
    let err = rel_err(&g.flat(), &numeric);
    assert!(err < 1e-4, "rel err {err}");
}

proptest! {
    #[test]
    fn loss_is_linear_in_memory_weight(seed in 0u64..1000, lambda in 0.0f64..5.0) {
        let logits = random(6, 4, seed, 4.0);
        let scores = random(1, 6, seed + 1, 3.0).row(0).to_owned();
        let fake = random(1, 3, seed + 2, 3.0).row(0).to_owned();
        let labels = [0, 1, 3, 0, 1, 3];
        let mask = ClassMask::from_classes(4, [0, 1, 3]);
        let at = |l: f64| {
            let w = [1.0, 1.0, 1.0, l, l, l];
            discriminator_loss(fake.view(), scores.view(), Some(logits.view()), &labels, Some(&w), &mask, AdversarialMode::CrossEntropy, LossWeights::default()).unwrap().0
        };
        let (l0, l1, ll) = (at(0.0), at(1.0), at(lambda));
        let predicted = l0.total + lambda * (l1.total - l0.total);
        prop_assert!((ll.total - predicted).abs() < 1e-9 * (1.0 + ll.total.abs()));
        prop_assert!((ll.l_c - (l0.l_c + lambda * (l1.l_c - l0.l_c))).abs() < 1e-9 * (1.0 + ll.l_c.abs()));
    }

    #[test]
    fn critic_loss_is_antisymmetric(a in proptest::collection::vec(-10.0f64..10.0, 1..8), b in proptest::collection::vec(-10.0f64..10.0, 1..8)) {
        let (a, b) = (Array1::from(a), Array1::from(b));
        let mask = ClassMask::all(1);
        let loss = |f: &Array1<f64>, r: &Array1<f64>| discriminator_loss(f.view(), r.view(), None, &[], None, &mask, AdversarialMode::Critic, LossWeights::default()).unwrap().0.l_ft;
        prop_assert!((loss(&a, &b) + loss(&b, &a)).abs() < 1e-9);
    }

    #[test]
    fn losses_are_finite_and_nonnegative_in_cross_entropy_mode(scores in proptest::collection::vec(-80.0f64..80.0, 1..10), seed in 0u64..100) {
        let s = Array1::from(scores);
        let n = s.len();
        let logits = random(n, 3, seed, 60.0);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let (d, g) = discriminator_loss(s.view(), s.view(), Some(logits.view()), &labels, None, &ClassMask::all(3), AdversarialMode::CrossEntropy, LossWeights::default()).unwrap();
        // the epsilon inside the log allows -ln(1 + 1e-7) per term
        prop_assert!(d.total.is_finite() && d.l_ft >= -1e-6 && d.l_c >= -1e-6);
        prop_assert!(g.d_real.iter().chain(g.d_fake.iter()).all(|v| v.is_finite()));
    }
}
