//! The six weighted objective terms, pseudo-labeling and the pixel-level
//! cycle baseline.
//!
//! Each public `loss_*` function builds a differentiable scalar from models
//! and image batches. The trainer shares intermediate translations between
//! terms, so it composes the lower-level graph helpers (`translate`,
//! `cross_entropy_logits`, `lsgan_*_scores`) directly.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{argmax_lowest, ImageBatch, LabelBatch, NoiseBatch, PixelRange, ProbBatch};
use crate::error::{Error, Result};
use crate::models::{Arch, ModelState};
use crate::tensor::{no_grad, Real, Tensor};

/// Probabilities are clipped to `[PROB_FLOOR, 1]` before taking logs.
pub const PROB_FLOOR: f64 = 1e-7;

/// Weights (α, β, γ, μ, η, ν) of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Target-side adversarial game (D_t against G_st).
    pub alpha: f64,
    /// C_t on translated source images.
    pub beta: f64,
    /// Source-side adversarial game (D_s against G_ts).
    pub gamma: f64,
    /// C_s on original source images.
    pub mu: f64,
    /// Self-labeling on translated target images.
    pub eta: f64,
    /// Class consistency through both generators.
    pub nu: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 10.0, gamma: 1.0, mu: 10.0, eta: 1.0, nu: 1.0 }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, mu: f64, eta: f64, nu: f64) -> Result<Self> {
        let w = LossWeights { alpha, beta, gamma, mu, eta, nu };
        w.validate()?;
        Ok(w)
    }

    /// Only the source classifier is trained.
    pub fn source_only(mu: f64) -> Self {
        LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0, mu, eta: 0.0, nu: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for term in Term::ALL {
            let w = self.get(term);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(format!("loss weight {} must be finite and >= 0, got {w}", term.weight_name())));
            }
        }
        Ok(())
    }

    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::AdvT => self.alpha,
            Term::ClsT => self.beta,
            Term::AdvS => self.gamma,
            Term::ClsS => self.mu,
            Term::SelfLabel => self.eta,
            Term::Consistency => self.nu,
        }
    }

    pub fn set(&mut self, term: Term, value: f64) {
        match term {
            Term::AdvT => self.alpha = value,
            Term::ClsT => self.beta = value,
            Term::AdvS => self.gamma = value,
            Term::ClsS => self.mu = value,
            Term::SelfLabel => self.eta = value,
            Term::Consistency => self.nu = value,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        Term::ALL.map(|t| self.get(t))
    }
}

/// The six terms of the objective, in weight order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    /// Target-side adversarial term. The discriminator D_t minimizes the
    /// least-squares loss; G_st minimizes `mean((D_t(fake) - 1)^2)`.
    AdvT,
    ClsT,
    AdvS,
    ClsS,
    SelfLabel,
    Consistency,
}

impl Term {
    pub const ALL: [Term; 6] = [Term::AdvT, Term::ClsT, Term::AdvS, Term::ClsS, Term::SelfLabel, Term::Consistency];

    pub fn name(self) -> &'static str {
        match self {
            Term::AdvT => "adv_t",
            Term::ClsT => "cls_t",
            Term::AdvS => "adv_s",
            Term::ClsS => "cls_s",
            Term::SelfLabel => "self",
            Term::Consistency => "cons",
        }
    }

    pub fn weight_name(self) -> &'static str {
        match self {
            Term::AdvT => "alpha",
            Term::ClsT => "beta",
            Term::AdvS => "gamma",
            Term::ClsS => "mu",
            Term::SelfLabel => "eta",
            Term::Consistency => "nu",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-term values of one step and their weighted sum.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Unweighted values of the terms that carried gradient this step.
    pub terms: BTreeMap<Term, f64>,
    /// Weighted sum of `terms`.
    pub total: f64,
    /// Least-squares losses minimized by the discriminators.
    pub disc_t: Option<f64>,
    pub disc_s: Option<f64>,
}

impl LossReport {
    pub fn term(&self, t: Term) -> Option<f64> {
        self.terms.get(&t).copied()
    }
}

/// Weighted sum of term values. Terms whose weight is zero are dropped from
/// the report.
pub fn total_loss(weights: &LossWeights, terms: &[(Term, f64)]) -> Result<LossReport> {
    weights.validate()?;
    let mut report = LossReport::default();
    for &(t, v) in terms {
        let w = weights.get(t);
        if w == 0.0 {
            continue;
        }
        report.terms.insert(t, v);
        report.total += w * v;
    }
    Ok(report)
}

/// Differentiable counterpart of [`total_loss`].
pub fn weighted_sum<T: Real>(weights: &LossWeights, terms: &[(Term, Tensor<T>)]) -> Option<Tensor<T>> {
    terms
        .iter()
        .filter(|(t, _)| weights.get(*t) != 0.0)
        .map(|(t, v)| v.scale(T::from_f64_lossy(weights.get(*t))))
        .reduce(|a, b| a.add(&b))
}

/// Mean of `-ln max(p[label], 1e-7)` over the batch.
pub fn cross_entropy(probs: &ProbBatch, labels: &LabelBatch) -> Result<f64> {
    if probs.len() != labels.len() || probs.classes() != labels.classes() {
        return Err(Error::contract(format!(
            "{} x {} probabilities against {} labels of {} classes",
            probs.len(),
            probs.classes(),
            labels.len(),
            labels.classes()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Empty("cross-entropy of an empty batch".into()));
    }
    let sum: f64 = probs
        .rows()
        .zip(labels.labels())
        .map(|(row, &y)| -row[y].clamp(PROB_FLOOR, 1.0).ln())
        .sum();
    Ok(sum / probs.len() as f64)
}

/// Softmax cross-entropy with probability clipping, as a graph node.
pub fn cross_entropy_logits<T: Real>(logits: &Tensor<T>, labels: &LabelBatch) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() || s[1] != labels.classes() {
        return Err(Error::contract(format!(
            "logits {s:?} do not match {} labels of {} classes",
            labels.len(),
            labels.classes()
        )));
    }
    Ok(logits.softmax().nll_clipped(labels.labels(), T::from_f64_lossy(PROB_FLOOR)))
}

/// `mean((real - 1)^2) + mean(fake^2)` on discriminator scores.
pub fn lsgan_discriminator_scores<T: Real>(real: &Tensor<T>, fake: &Tensor<T>) -> Tensor<T> {
    real.mse_to(T::one()).add(&fake.mse_to(T::zero()))
}

/// `mean((fake - 1)^2)` on discriminator scores.
pub fn lsgan_generator_scores<T: Real>(fake: &Tensor<T>) -> Tensor<T> {
    fake.mse_to(T::one())
}

/// Discriminator loss. `fake` is detached, so no gradient reaches the
/// generator that produced it.
pub fn lsgan_discriminator_loss<T: Real>(d: &ModelState<T>, real: &ImageBatch<T>, fake: &ImageBatch<T>) -> Result<Tensor<T>> {
    real.require_range(PixelRange::DISCRIMINATIVE, "discriminator loss (real)")?;
    fake.require_range(PixelRange::DISCRIMINATIVE, "discriminator loss (fake)")?;
    lsgan_discriminator_graph(d, &real.to_tensor(), &fake.to_tensor())
}

pub fn lsgan_discriminator_graph<T: Real>(d: &ModelState<T>, real: &Tensor<T>, fake: &Tensor<T>) -> Result<Tensor<T>> {
    if real.shape()[1..] != fake.shape()[1..] {
        return Err(Error::contract(format!("real {:?} and fake {:?} differ in shape", real.shape(), fake.shape())));
    }
    let r = d.forward_discriminator(real)?;
    let f = d.forward_discriminator(&fake.detach())?;
    Ok(lsgan_discriminator_scores(&r, &f))
}

/// Generator adversarial loss. Gradients reach the discriminator parameters
/// too; the trainer only applies them to the generators.
pub fn lsgan_generator_graph<T: Real>(d: &ModelState<T>, fake: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(lsgan_generator_scores(&d.forward_discriminator(fake)?))
}

/// Generator-side least-squares loss of fixed fake images.
pub fn lsgan_generator_loss<T: Real>(d: &ModelState<T>, fake: &ImageBatch<T>) -> Result<Tensor<T>> {
    fake.require_range(PixelRange::DISCRIMINATIVE, "generator loss (fake)")?;
    lsgan_generator_graph(d, &fake.to_tensor())
}

/// Adversarial loss of `g` against `d`, differentiable in the generator.
pub fn lsgan_translation_loss<T: Real>(
    d: &ModelState<T>,
    g: &ModelState<T>,
    x: &ImageBatch<T>,
    z: &NoiseBatch<T>,
) -> Result<Tensor<T>> {
    lsgan_generator_graph(d, &translate(g, &generator_input(x)?, z)?)
}

fn generator_input<T: Real>(x: &ImageBatch<T>) -> Result<Tensor<T>> {
    x.require_range(PixelRange::GENERATOR, "generator")?;
    Ok(x.to_tensor())
}

fn classifier_input<T: Real>(x: &ImageBatch<T>) -> Result<Tensor<T>> {
    x.require_range(PixelRange::DISCRIMINATIVE, "classifier")?;
    Ok(x.to_tensor())
}

/// Generator forward pass; the result lies in the discriminative range.
pub fn translate<T: Real>(g: &ModelState<T>, x: &Tensor<T>, z: &NoiseBatch<T>) -> Result<Tensor<T>> {
    g.forward_generator(x, &z.to_tensor())
}

/// Rescales a generator output into the generator input range.
pub fn rechain<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.scale(T::from_f64_lossy(1.0 / 255.0))
}

/// Cross-entropy of `C_t(G_st(x_s, z_s))` against the source labels.
pub fn loss_ct<T: Real>(
    g_st: &ModelState<T>,
    c_t: &ModelState<T>,
    x_s: &ImageBatch<T>,
    z_s: &NoiseBatch<T>,
    y_s: &LabelBatch,
) -> Result<Tensor<T>> {
    let x_st = translate(g_st, &generator_input(x_s)?, z_s)?;
    cross_entropy_logits(&c_t.forward_classifier(&x_st)?, y_s)
}

/// Cross-entropy of `C_s(x_s)`. Source images here are in the
/// discriminative range; no generator is involved.
pub fn loss_cs<T: Real>(c_s: &ModelState<T>, x_s: &ImageBatch<T>, y_s: &LabelBatch) -> Result<Tensor<T>> {
    cross_entropy_logits(&c_s.forward_classifier(&classifier_input(x_s)?)?, y_s)
}

/// Per-row argmax of class probabilities, ties to the lowest index.
pub fn pseudo_labels_from_probs(p: &ProbBatch) -> LabelBatch {
    p.argmax()
}

/// Labels of `x_t` according to `C_s(G_ts(x_t, z_t))`. Computed without
/// recording gradients.
pub fn assign_pseudo_labels<T: Real>(
    c_s: &ModelState<T>,
    g_ts: &ModelState<T>,
    x_t: &ImageBatch<T>,
    z_t: &NoiseBatch<T>,
) -> Result<LabelBatch> {
    let x = generator_input(x_t)?;
    let logits = no_grad(|| c_s.forward_classifier(&translate(g_ts, &x, z_t)?))?;
    pseudo_labels_from_logits(&logits)
}

pub fn pseudo_labels_from_logits<T: Real>(logits: &Tensor<T>) -> Result<LabelBatch> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(Error::contract(format!("expected (batch, classes) logits, got {s:?}")));
    }
    let labels = logits.data().chunks_exact(s[1]).map(argmax_lowest).collect();
    LabelBatch::new(labels, s[1])
}

/// Cross-entropy of `C_s(G_ts(x_t, z_t))` against fixed pseudo-labels.
pub fn loss_self<T: Real>(
    g_ts: &ModelState<T>,
    c_s: &ModelState<T>,
    x_t: &ImageBatch<T>,
    z_t: &NoiseBatch<T>,
    y_self: &LabelBatch,
) -> Result<Tensor<T>> {
    let x_ts = translate(g_ts, &generator_input(x_t)?, z_t)?;
    cross_entropy_logits(&c_s.forward_classifier(&x_ts)?, y_self)
}

/// `G_ts(G_st(x_s, z_s), z_t)`, returned in the discriminative range.
pub fn round_trip<T: Real>(
    g_st: &ModelState<T>,
    g_ts: &ModelState<T>,
    x_s: &Tensor<T>,
    z_s: &NoiseBatch<T>,
    z_t: &NoiseBatch<T>,
) -> Result<Tensor<T>> {
    check_chain(g_st, g_ts)?;
    let x_st = translate(g_st, x_s, z_s)?;
    translate(g_ts, &rechain(&x_st), z_t)
}

fn check_chain<T: Real>(g_st: &ModelState<T>, g_ts: &ModelState<T>) -> Result<()> {
    match (g_st.arch(), g_ts.arch()) {
        (Arch::Generator(a), Arch::Generator(b)) if a.image == b.image => Ok(()),
        _ => Err(Error::contract("the two generators must share one image shape")),
    }
}

/// Cross-entropy of `C_s(G_ts(G_st(x_s, z_s), z_t))` against the source labels.
pub fn loss_consistency<T: Real>(
    g_st: &ModelState<T>,
    g_ts: &ModelState<T>,
    c_s: &ModelState<T>,
    x_s: &ImageBatch<T>,
    z_s: &NoiseBatch<T>,
    z_t: &NoiseBatch<T>,
    y_s: &LabelBatch,
) -> Result<Tensor<T>> {
    let back = round_trip(g_st, g_ts, &generator_input(x_s)?, z_s, z_t)?;
    cross_entropy_logits(&c_s.forward_classifier(&back)?, y_s)
}

/// Mean absolute pixel error of the round trip, measured in the generator
/// input range.
pub fn cycle_reconstruction_loss<T: Real>(
    g_st: &ModelState<T>,
    g_ts: &ModelState<T>,
    x_s: &ImageBatch<T>,
    z_s: &NoiseBatch<T>,
    z_t: &NoiseBatch<T>,
) -> Result<Tensor<T>> {
    let x = generator_input(x_s)?;
    let back = round_trip(g_st, g_ts, &x, z_s, z_t)?;
    cycle_graph(&x, &back)
}

pub fn cycle_graph<T: Real>(x: &Tensor<T>, back: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != back.shape() {
        return Err(Error::contract(format!("cannot compare {:?} with {:?}", x.shape(), back.shape())));
    }
    Ok(rechain(back).abs_diff_mean(x))
}
