use clogan::filtering::*;
use clogan::nn::ClassMask;
use clogan::rng::rng_from_seed;
use ndarray::Array2;
use proptest::prelude::*;

/// Logits predicting `pred[i]` for row `i`.
fn stub_logits(pred: &[usize], k: usize) -> Array2<f32> {
    Array2::from_shape_fn((pred.len(), k), |(i, j)| if j == pred[i] { 5.0 } else { 0.0 })
}

#[test]
fn cfm_keeps_everything_when_predictions_match() {
    let labels = [0, 1, 2, 1, 0];
    let r = cfm_from_logits(stub_logits(&labels, 3).view(), &labels, &ClassMask::all(3)).unwrap();
    assert_eq!(r.acceptance_rate(), 1.0);
}

#[test]
fn cfm_rejects_planted_misclassifications() {
    let labels = [0, 1, 2, 3, 0, 1, 2, 3, 0, 1];
    let mut pred = labels;
    for i in [2, 5, 9] {
        pred[i] = (pred[i] + 1) % 4;
    }
    let r = cfm_from_logits(stub_logits(&pred, 4).view(), &labels, &ClassMask::all(4)).unwrap();
    assert_eq!(r.rejected.iter().map(|&(i, _)| i).collect::<Vec<_>>(), vec![2, 5, 9]);
    assert!(r.rejected.iter().all(|&(_, why)| why == RejectReason::ClassMismatch));
    assert!((r.acceptance_rate() - 0.7).abs() < 1e-12);
}

#[test]
fn cfm_ignores_inactive_logits() {
    // the largest logit belongs to an inactive class; argmax is over active ones
    let logits = Array2::from_shape_vec((1, 3), vec![1.0f32, 0.0, 9.0]).unwrap();
    let r = cfm_from_logits(logits.view(), &[0], &ClassMask::from_classes(3, [0, 1])).unwrap();
    assert_eq!(r.kept, vec![0]);
}

#[test]
fn empty_batch_has_unit_rate() {
    let r = cfm_from_logits(Array2::<f32>::zeros((0, 3)).view(), &[], &ClassMask::all(3)).unwrap();
    assert_eq!(r.batch_size(), 0);
    assert_eq!(r.acceptance_rate(), 1.0);
}

#[test]
fn srf_threshold_convention() {
    assert_eq!(srf_filter(&[0.1, 0.9, 0.5], 0.5).kept, vec![1, 2]);
    assert_eq!(srf_filter(&[0.1, 0.9, 0.5], f64::NEG_INFINITY).kept.len(), 3);
    assert!(srf_filter(&[0.1, 0.9, 0.5], f64::INFINITY).kept.is_empty());
}

#[test]
fn drs_requires_burn_in() {
    let mut stats = BurnInStats::default();
    assert!(matches!(drs_acceptance(&[0.0], &mut stats, &DrsConfig::default()), Err(clogan::Error::Contract(_))));
}

#[test]
fn drs_equal_logits_give_equal_probabilities() {
    let mut stats = BurnInStats::default();
    stats.observe(&[1.0, 2.0, 3.0]);
    let p = drs_acceptance(&[0.7; 6], &mut stats, &DrsConfig::default()).unwrap();
    assert!(p.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn drs_prefers_higher_logits() {
    let mut stats = BurnInStats::default();
    stats.observe(&[2.0]);
    let p = drs_acceptance(&[-3.0, -1.0, 0.0, 1.5], &mut stats, &DrsConfig::default()).unwrap();
    assert!(p.windows(2).all(|w| w[0] < w[1]), "{p:?}");
    assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn extreme_probabilities_are_deterministic() {
    for seed in 0..50 {
        let r = bernoulli_accept(&[1.0, 0.0], &mut rng_from_seed(seed));
        assert_eq!(r.kept, vec![0]);
    }
}

#[test]
fn stub_acceptance_frequencies_match() {
    let probs = [0.1, 0.35, 0.5, 0.8, 0.95];
    let mut rng = rng_from_seed(17);
    let trials = 10_000;
    let mut kept = [0usize; 5];
    for _ in 0..trials {
        for i in bernoulli_accept(&probs, &mut rng).kept {
            kept[i] += 1;
        }
    }
    for (i, &p) in probs.iter().enumerate() {
        let f = kept[i] as f64 / trials as f64;
        assert!((f - p).abs() < 0.02, "{i}: {f} vs {p}");
    }
}

#[test]
fn filter_configs_parse() {
    #[derive(serde::Deserialize)]
    struct W {
        filter: FilterConfig,
    }
    let w: W = toml::from_str("filter = { kind = \"srf\", threshold = 0.25 }").unwrap();
    assert_eq!(w.filter, FilterConfig::Srf { threshold: 0.25 });
    let w: W = toml::from_str("filter = { kind = \"drs\", gamma_percentile = 90.0 }").unwrap();
    assert_eq!(w.filter, FilterConfig::Drs(DrsConfig { gamma_percentile: 90.0, ..DrsConfig::default() }));
    assert_eq!(w.filter.build().name(), "drs");
}

proptest! {
    #[test]
    fn reports_partition_the_batch(labels in proptest::collection::vec(0usize..4, 0..40), seed in 0u64..500, threshold in -2.0f64..2.0) {
        let n = labels.len();
        let mut rng = rng_from_seed(seed);
        let logits = Array2::from_shape_fn((n, 4), |_| rand::Rng::random_range(&mut rng, -3.0f32..3.0));
        let mask = ClassMask::all(4);
        let scores: Vec<f32> = logits.column(0).to_vec();
        let mut stats = BurnInStats::default();
        stats.observe(&[0.0]);
        let reports = [
            cfm_from_logits(logits.view(), &labels, &mask).unwrap(),
            srf_filter(&scores, threshold),
            drs_filter(&scores, &mut stats, &DrsConfig::default(), &mut rng).unwrap(),
        ];
        for r in &reports {
            let mut all: Vec<usize> = r.kept.iter().copied().chain(r.rejected.iter().map(|&(i, _)| i)).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let expected = if n == 0 { 1.0 } else { r.kept.len() as f64 / n as f64 };
            prop_assert!((r.acceptance_rate() - expected).abs() < 1e-12);
        }
        // CFM soundness: every survivor is classified as its label
        for &i in &reports[0].kept {
            prop_assert_eq!(mask.argmax(logits.row(i).as_slice().unwrap()), labels[i]);
        }
    }
}
