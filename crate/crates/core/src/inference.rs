//! Test-time prediction with the two classifiers.
//!
//! `C_t` reads target images directly; `C_s` reads them after translation to
//! the source style by `G_ts`. The two probability outputs are mixed as
//! `σ · p_s + (1 − σ) · p_t`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    discriminative_to_raw, preprocess_discriminative_input, preprocess_generator_input, ImageBatch, LabelBatch, NoiseBatch, PixelRange,
    ProbBatch,
};
use crate::error::{Error, Result};
use crate::models::{classify, generate, Mode, ModelState};

/// Candidate mixing weights searched on the validation set.
pub const SIGMA_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Images are pushed through the networks in chunks of this size.
pub const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    sigma: f64,
}

impl EnsembleWeights {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&sigma) {
            return Err(Error::contract(format!("ensemble sigma must lie in [0, 1], got {sigma}")));
        }
        Ok(EnsembleWeights { sigma })
    }

    /// Weight of `C_s ∘ G_ts`.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Weight of `C_t`.
    pub fn tau(&self) -> f64 {
        1.0 - self.sigma
    }
}

/// Convex combination of the two classifiers' probabilities. The end points
/// return the corresponding input unchanged.
pub fn combine(p_source: &ProbBatch, p_target: &ProbBatch, w: EnsembleWeights) -> Result<ProbBatch> {
    if p_source.len() != p_target.len() || p_source.classes() != p_target.classes() {
        return Err(Error::contract(format!(
            "cannot mix {}x{} with {}x{} probabilities",
            p_source.len(),
            p_source.classes(),
            p_target.len(),
            p_target.classes()
        )));
    }
    if w.sigma == 0.0 {
        return Ok(p_target.clone());
    }
    if w.sigma == 1.0 {
        return Ok(p_source.clone());
    }
    let (s, t) = (w.sigma, w.tau());
    let mixed = p_source.as_slice().iter().zip(p_target.as_slice()).map(|(a, b)| s * a + t * b).collect();
    ProbBatch::new(mixed, p_source.classes())
}

/// Test-time noise: the vector for image `index` depends only on
/// `(seed, index)`, so it is shared by every σ candidate and every chunking.
pub fn test_noise(indices: &[usize], dim: usize, seed: u64) -> NoiseBatch {
    let mut data = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        data.extend_from_slice(NoiseBatch::<f32>::sample(1, dim, &mut rng).data());
    }
    NoiseBatch::new(data, indices.len(), dim).expect("noise size is consistent")
}

/// Per-classifier probabilities for one set of target images.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentProbs {
    /// `C_s(G_ts(x_t, z_t))`.
    pub source: ProbBatch,
    /// `C_t(x_t)`.
    pub target: ProbBatch,
}

impl ComponentProbs {
    pub fn combine(&self, w: EnsembleWeights) -> Result<ProbBatch> {
        combine(&self.source, &self.target, w)
    }
}

fn require_eval(models: &[(&str, &ModelState)]) -> Result<()> {
    for (name, m) in models {
        if m.mode() != Mode::Eval {
            return Err(Error::contract(format!("{name} must be in eval mode for inference")));
        }
    }
    Ok(())
}

/// Class probabilities of `C_s ∘ G_ts` and `C_t` on raw target images.
/// `indices` identifies each image for the noise draw.
pub fn component_probs(
    c_s: &ModelState,
    c_t: &ModelState,
    g_ts: &ModelState,
    x_raw: &ImageBatch,
    indices: &[usize],
    noise_seed: u64,
) -> Result<ComponentProbs> {
    require_eval(&[("C_s", c_s), ("C_t", c_t), ("G_ts", g_ts)])?;
    x_raw.require_range(PixelRange::RAW, "inference")?;
    if indices.len() != x_raw.len() {
        return Err(Error::contract(format!("{} noise indices for {} images", indices.len(), x_raw.len())));
    }
    if x_raw.is_empty() {
        return Err(Error::Empty("no images to classify".into()));
    }
    let dim = g_ts.generator_arch().ok_or_else(|| Error::contract("G_ts must be a generator"))?.noise_dim;
    let (mut ps, mut pt) = (Vec::new(), Vec::new());
    let mut classes = 0;
    for start in (0..x_raw.len()).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(x_raw.len())).collect();
        let chunk = x_raw.select(&idx);
        let z = test_noise(&indices[start..start + idx.len()], dim, noise_seed);
        let translated = generate(g_ts, &preprocess_generator_input(&chunk)?, &z)?;
        let a = classify(c_s, &translated)?;
        let b = classify(c_t, &preprocess_discriminative_input(&chunk)?)?;
        classes = a.classes();
        ps.extend_from_slice(a.as_slice());
        pt.extend_from_slice(b.as_slice());
    }
    Ok(ComponentProbs { source: ProbBatch::new(ps, classes)?, target: ProbBatch::new(pt, classes)? })
}

/// Translates raw images with a generator in eval mode and returns the
/// result in the raw range. Used for reports and image grids.
pub fn translate_raw(g: &ModelState, x_raw: &ImageBatch, indices: &[usize], noise_seed: u64) -> Result<ImageBatch> {
    require_eval(&[("generator", g)])?;
    x_raw.require_range(PixelRange::RAW, "translation")?;
    if indices.len() != x_raw.len() {
        return Err(Error::contract(format!("{} noise indices for {} images", indices.len(), x_raw.len())));
    }
    let dim = g.generator_arch().ok_or_else(|| Error::contract("translation needs a generator"))?.noise_dim;
    let mut out = Vec::with_capacity(x_raw.data().len());
    for start in (0..x_raw.len()).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(x_raw.len())).collect();
        let z = test_noise(&indices[start..start + idx.len()], dim, noise_seed);
        let y = generate(g, &preprocess_generator_input(&x_raw.select(&idx))?, &z)?;
        out.extend_from_slice(discriminative_to_raw(&y)?.data());
    }
    ImageBatch::new(out, x_raw.len(), x_raw.image_shape(), PixelRange::RAW)
}

/// `σ · softmax(C_s(G_ts(x_t, z_t))) + τ · softmax(C_t(x_t))`, with `x_t` in
/// the raw range and explicit noise. All three networks must be in eval mode.
pub fn ensemble_predict(
    c_s: &ModelState,
    c_t: &ModelState,
    g_ts: &ModelState,
    x_raw: &ImageBatch,
    z_t: &NoiseBatch,
    w: EnsembleWeights,
) -> Result<ProbBatch> {
    require_eval(&[("C_s", c_s), ("C_t", c_t), ("G_ts", g_ts)])?;
    x_raw.require_range(PixelRange::RAW, "inference")?;
    let translated = generate(g_ts, &preprocess_generator_input(x_raw)?, z_t)?;
    let p_s = classify(c_s, &translated)?;
    let p_t = classify(c_t, &preprocess_discriminative_input(x_raw)?)?;
    combine(&p_s, &p_t, w)
}

/// Outcome of the σ grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSelection {
    pub weights: EnsembleWeights,
    /// `(σ, validation accuracy)` for every grid point, in grid order.
    pub accuracies: Vec<(f64, f64)>,
}

/// Picks the grid σ with the highest validation accuracy; ties go to the
/// smallest σ.
pub fn select_sigma_from_probs(components: &ComponentProbs, labels: &LabelBatch) -> Result<SigmaSelection> {
    if labels.is_empty() {
        return Err(Error::Empty("sigma selection needs a non-empty validation set".into()));
    }
    if labels.len() != components.target.len() {
        return Err(Error::contract(format!(
            "{} validation labels for {} predictions",
            labels.len(),
            components.target.len()
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    let mut accuracies = Vec::with_capacity(SIGMA_GRID.len());
    for sigma in SIGMA_GRID {
        let pred = components.combine(EnsembleWeights::new(sigma)?)?.argmax();
        // Compare hit counts so that ties are exact.
        let hits = pred.labels().iter().zip(labels.labels()).filter(|(a, b)| a == b).count();
        accuracies.push((sigma, hits as f64 / labels.len() as f64));
        if best.is_none_or(|(h, _)| hits > h) {
            best = Some((hits, sigma));
        }
    }
    let (_, sigma) = best.expect("grid is non-empty");
    Ok(SigmaSelection { weights: EnsembleWeights::new(sigma)?, accuracies })
}

/// Grid search of σ on labeled raw validation images.
pub fn select_sigma(
    c_s: &ModelState,
    c_t: &ModelState,
    g_ts: &ModelState,
    val_raw: &ImageBatch,
    val_labels: &LabelBatch,
    noise_seed: u64,
) -> Result<SigmaSelection> {
    if val_raw.is_empty() {
        return Err(Error::Empty("sigma selection needs a non-empty validation set".into()));
    }
    let indices: Vec<usize> = (0..val_raw.len()).collect();
    let components = component_probs(c_s, c_t, g_ts, val_raw, &indices, noise_seed)?;
    select_sigma_from_probs(&components, val_labels)
}

/// One exported prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub index: usize,
    pub predicted: usize,
    pub probs: Vec<f64>,
    pub sigma: f64,
}

pub fn prediction_records(probs: &ProbBatch, indices: &[usize], sigma: f64) -> Result<Vec<PredictionRecord>> {
    if indices.len() != probs.len() {
        return Err(Error::contract(format!("{} indices for {} predictions", indices.len(), probs.len())));
    }
    let predicted = probs.argmax();
    Ok(indices
        .iter()
        .zip(probs.rows())
        .zip(predicted.labels())
        .map(|((&index, row), &predicted)| PredictionRecord { index, predicted, probs: row.to_vec(), sigma })
        .collect())
}
