//! Quality gates for generated replay: class-conditional filtering (CFM),
//! soft rejection on the real/fake logit (SRF) and discriminator rejection
//! sampling (DRS).

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AcGan, ClassMask, LatentBatch};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    ClassMismatch,
    BelowThreshold,
    DrsRejected,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterReport {
    pub kept: Vec<usize>,
    pub rejected: Vec<(usize, RejectReason)>,
}

impl FilterReport {
    pub fn batch_size(&self) -> usize {
        self.kept.len() + self.rejected.len()
    }

    /// `|kept| / batch size`, defined as 1 for an empty batch.
    pub fn acceptance_rate(&self) -> f64 {
        match self.batch_size() {
            0 => 1.0,
            n => self.kept.len() as f64 / n as f64,
        }
    }

    fn from_decisions(decisions: impl Iterator<Item = Option<RejectReason>>) -> Self {
        let mut report = Self::default();
        for (i, d) in decisions.enumerate() {
            match d {
                None => report.kept.push(i),
                Some(reason) => report.rejected.push((i, reason)),
            }
        }
        report
    }
}

/// Keeps the samples whose argmax over active class logits equals their
/// conditioning label.
pub fn cfm_from_logits(logits: ArrayView2<f32>, cond_labels: &[usize], mask: &ClassMask) -> Result<FilterReport> {
    if logits.nrows() != cond_labels.len() {
        return Err(Error::contract(format!("{} logit rows for {} labels", logits.nrows(), cond_labels.len())));
    }
    Ok(FilterReport::from_decisions(logits.rows().into_iter().zip(cond_labels).map(|(row, &y)| {
        let pred = mask.argmax(row.as_slice().expect("contiguous"));
        (pred != y).then_some(RejectReason::ClassMismatch)
    })))
}

pub fn cfm_filter(model: &AcGan<f32>, images: &Array2<f32>, cond_labels: &[usize], mask: &ClassMask) -> Result<FilterReport> {
    if images.nrows() == 0 {
        return Ok(FilterReport::default());
    }
    let logits = model.critic.forward(images).logits.ok_or_else(|| Error::contract("CFM needs a class head"))?;
    cfm_from_logits(logits.view(), cond_labels, mask)
}

/// Keeps `i` iff `scores[i] >= threshold`.
pub fn srf_filter(scores: &[f32], threshold: f64) -> FilterReport {
    FilterReport::from_decisions(scores.iter().map(|&s| (f64::from(s) < threshold).then_some(RejectReason::BelowThreshold)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrsConfig {
    #[serde(default = "DrsConfig::default_burn_in")]
    pub burn_in_samples: usize,
    /// Percentile of the batch's F values subtracted before the sigmoid.
    #[serde(default = "DrsConfig::default_gamma")]
    pub gamma_percentile: f64,
    #[serde(default = "DrsConfig::default_epsilon")]
    pub epsilon: f64,
}

impl DrsConfig {
    fn default_burn_in() -> usize {
        10_000
    }

    fn default_gamma() -> f64 {
        80.0
    }

    fn default_epsilon() -> f64 {
        1e-6
    }
}

impl Default for DrsConfig {
    fn default() -> Self {
        Self { burn_in_samples: Self::default_burn_in(), gamma_percentile: Self::default_gamma(), epsilon: Self::default_epsilon() }
    }
}

/// Running maximum of the real/fake logit, i.e. of the log density ratio.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BurnInStats {
    pub max_logit: f64,
    pub samples: usize,
}

impl BurnInStats {
    pub fn observe(&mut self, scores: &[f32]) {
        for &s in scores {
            let s = f64::from(s);
            if self.samples == 0 || s > self.max_logit {
                self.max_logit = s;
            }
            self.samples += 1;
        }
    }
}

fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

/// Acceptance probabilities: `σ(F - γ)` with
/// `F = D - D* - ln(1 - exp(D - D* - ε))`, `D*` the running maximum (updated
/// with this batch) and `γ` a percentile of `F` over the batch.
pub fn drs_acceptance(scores: &[f32], stats: &mut BurnInStats, config: &DrsConfig) -> Result<Vec<f64>> {
    if stats.samples == 0 {
        return Err(Error::contract("DRS used before its burn-in pass"));
    }
    if scores.is_empty() {
        return Ok(Vec::new());
    }
    stats.observe(scores);
    let dmax = stats.max_logit;
    let f: Vec<f64> = scores
        .iter()
        .map(|&s| {
            let d = f64::from(s) - dmax;
            d - (-(d - config.epsilon).exp()).ln_1p()
        })
        .collect();
    let gamma = percentile(&f, config.gamma_percentile);
    Ok(f.iter().map(|&v| 1.0 / (1.0 + (-(v - gamma)).exp())).collect())
}

/// Independent Bernoulli acceptance with the given probabilities.
pub fn bernoulli_accept(probs: &[f64], rng: &mut Rng) -> FilterReport {
    FilterReport::from_decisions(probs.iter().map(|&p| {
        let u: f64 = rng.random();
        (u >= p).then_some(RejectReason::DrsRejected)
    }))
}

pub fn drs_filter(scores: &[f32], stats: &mut BurnInStats, config: &DrsConfig, rng: &mut Rng) -> Result<FilterReport> {
    let probs = drs_acceptance(scores, stats, config)?;
    Ok(bernoulli_accept(&probs, rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterConfig {
    #[default]
    Cfm,
    Srf {
        threshold: f64,
    },
    Drs(#[serde(default)] DrsConfig),
    None,
}

impl FilterConfig {
    pub fn build(&self) -> Box<dyn ReplayFilter> {
        match self {
            FilterConfig::Cfm => Box::new(Cfm),
            FilterConfig::Srf { threshold } => Box::new(Srf { threshold: *threshold }),
            FilterConfig::Drs(cfg) => Box::new(Drs { config: *cfg, stats: BurnInStats::default() }),
            FilterConfig::None => Box::new(NoFilter),
        }
    }
}

/// A filter applied to freshly generated replay inside the training loop.
pub trait ReplayFilter {
    fn name(&self) -> &'static str;

    /// Called once before replay starts for a task.
    fn begin_task(&mut self, _model: &AcGan<f32>, _old: &ClassMask, _rng: &mut Rng) -> Result<()> {
        Ok(())
    }

    fn filter(&mut self, model: &AcGan<f32>, images: &Array2<f32>, cond_labels: &[usize], mask: &ClassMask, rng: &mut Rng) -> Result<FilterReport>;
}

pub struct Cfm;

impl ReplayFilter for Cfm {
    fn name(&self) -> &'static str {
        "cfm"
    }

    fn filter(&mut self, model: &AcGan<f32>, images: &Array2<f32>, cond_labels: &[usize], mask: &ClassMask, _rng: &mut Rng) -> Result<FilterReport> {
        cfm_filter(model, images, cond_labels, mask)
    }
}

pub struct Srf {
    pub threshold: f64,
}

fn real_fake_scores(model: &AcGan<f32>, images: &Array2<f32>) -> Result<Vec<f32>> {
    let scores = model.critic.forward(images).scores.ok_or_else(|| Error::contract("filter needs a real/fake head"))?;
    Ok(scores.to_vec())
}

impl ReplayFilter for Srf {
    fn name(&self) -> &'static str {
        "srf"
    }

    fn filter(&mut self, model: &AcGan<f32>, images: &Array2<f32>, _cond_labels: &[usize], _mask: &ClassMask, _rng: &mut Rng) -> Result<FilterReport> {
        Ok(srf_filter(&real_fake_scores(model, images)?, self.threshold))
    }
}

pub struct Drs {
    pub config: DrsConfig,
    pub stats: BurnInStats,
}

impl ReplayFilter for Drs {
    fn name(&self) -> &'static str {
        "drs"
    }

    fn begin_task(&mut self, model: &AcGan<f32>, old: &ClassMask, rng: &mut Rng) -> Result<()> {
        self.stats = BurnInStats::default();
        let classes = old.active_classes();
        let mut left = self.config.burn_in_samples.max(1);
        while left > 0 {
            let n = left.min(500);
            let draws = LatentBatch::sample(rng, n, model.config.latent_dim, &classes);
            let images = model.generate(&draws, old)?;
            self.stats.observe(&real_fake_scores(model, &images)?);
            left -= n;
        }
        Ok(())
    }

    fn filter(&mut self, model: &AcGan<f32>, images: &Array2<f32>, _cond_labels: &[usize], _mask: &ClassMask, rng: &mut Rng) -> Result<FilterReport> {
        if images.nrows() == 0 {
            return Ok(FilterReport::default());
        }
        drs_filter(&real_fake_scores(model, images)?, &mut self.stats, &self.config, rng)
    }
}

pub struct NoFilter;

impl ReplayFilter for NoFilter {
    fn name(&self) -> &'static str {
        "none"
    }

    fn filter(&mut self, _model: &AcGan<f32>, images: &Array2<f32>, _cond_labels: &[usize], _mask: &ClassMask, _rng: &mut Rng) -> Result<FilterReport> {
        Ok(FilterReport { kept: (0..images.nrows()).collect(), rejected: Vec::new() })
    }
}
