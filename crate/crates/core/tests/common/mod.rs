//! Shared fixtures for the integration tests: miniature networks and
//! independent reference computations.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symgan_core::data::{ImageBatch, ImageShape, PixelRange};
use symgan_core::models::{Arch, ClassifierArch, DiscriminatorArch, GeneratorArch, ModelState};
use symgan_core::tensor::Tensor;

pub const SIDE: usize = 4;
pub const CLASSES: usize = 3;
pub const NOISE: usize = 2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn shape() -> ImageShape {
    ImageShape::new(SIDE, SIDE, 1)
}

/// The six networks at 4x4 resolution with at most two features per layer.
pub struct Mini {
    pub g_st: ModelState<f64>,
    pub g_ts: ModelState<f64>,
    pub d_s: ModelState<f64>,
    pub d_t: ModelState<f64>,
    pub c_s: ModelState<f64>,
    pub c_t: ModelState<f64>,
}

pub fn generator_arch() -> Arch {
    Arch::Generator(GeneratorArch { image: shape(), noise_dim: NOISE, features: 2, residual_blocks: 1, output_scale: 127.5 })
}

pub fn discriminator_arch() -> Arch {
    Arch::Discriminator(DiscriminatorArch { image: shape(), features: [2, 2], leaky_slope: 0.2 })
}

pub fn classifier_arch() -> Arch {
    Arch::Classifier(ClassifierArch { image: shape(), classes: CLASSES, conv: [2, 2], hidden: [2, 2] })
}

pub fn mini(seed: u64) -> Mini {
    let mut r = rng(seed);
    let std = 0.5;
    Mini {
        g_st: ModelState::build(generator_arch(), std, &mut r).unwrap(),
        g_ts: ModelState::build(generator_arch(), std, &mut r).unwrap(),
        d_s: ModelState::build(discriminator_arch(), std, &mut r).unwrap(),
        d_t: ModelState::build(discriminator_arch(), std, &mut r).unwrap(),
        c_s: ModelState::build(classifier_arch(), std, &mut r).unwrap(),
        c_t: ModelState::build(classifier_arch(), std, &mut r).unwrap(),
    }
}

pub fn images(b: usize, range: PixelRange, r: &mut ChaCha8Rng) -> ImageBatch<f64> {
    let data = (0..b * SIDE * SIDE).map(|_| r.random_range(range.lo..range.hi)).collect();
    ImageBatch::new(data, b, shape(), range).unwrap()
}

/// Parameters of several networks, named `{prefix}.{param}`.
pub fn named(models: &[(&str, &ModelState<f64>)]) -> Vec<(String, Tensor<f64>)> {
    models
        .iter()
        .flat_map(|(prefix, m)| m.params().into_iter().map(move |p| (format!("{prefix}.{}", p.name), p.tensor.clone())))
        .collect()
}

pub fn zero_params(m: &ModelState<f64>) {
    for p in m.params() {
        let n = p.tensor.len();
        p.tensor.set_data(&vec![0.0; n]);
    }
}

/// Softmax of one row of logits, written out directly.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean clipped negative log-likelihood of `labels` under softmax(logits).
pub fn reference_ce(logits: &[f64], classes: usize, labels: &[usize]) -> f64 {
    let rows: Vec<&[f64]> = logits.chunks(classes).collect();
    assert_eq!(rows.len(), labels.len());
    let mut total = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        let p = softmax_row(row)[y].clamp(1e-7, 1.0);
        total -= p.ln();
    }
    total / labels.len() as f64
}

pub fn reference_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Gradient of every parameter (zeros where none was accumulated).
pub fn grads(params: &[(String, Tensor<f64>)]) -> Vec<Vec<f64>> {
    params.iter().map(|(_, t)| t.grad().unwrap_or_else(|| vec![0.0; t.len()])).collect()
}

pub fn clear(params: &[(String, Tensor<f64>)]) {
    for (_, t) in params {
        t.zero_grad();
    }
}

/// Finite-difference checks of every objective term on the miniature
/// networks, with respect to all parameters that receive gradient.
pub fn loss_gradient_reports(seed: u64) -> Vec<(&'static str, symgan_core::gradcheck::GradCheckReport)> {
    use symgan_core::data::{LabelBatch, NoiseBatch};
    use symgan_core::gradcheck::check_gradients;
    use symgan_core::losses::*;
    use symgan_core::models::generate;

    const EPS: f64 = 1e-6;
    let m = mini(seed);
    let mut r = rng(seed.wrapping_add(100));
    let xs_g = images(2, PixelRange::GENERATOR, &mut r);
    let xt_g = images(2, PixelRange::GENERATOR, &mut r);
    let xs_d = images(2, PixelRange::DISCRIMINATIVE, &mut r);
    let xt_d = images(2, PixelRange::DISCRIMINATIVE, &mut r);
    let ys = LabelBatch::new(vec![0, 2], CLASSES).unwrap();
    let zs = NoiseBatch::<f64>::sample(2, NOISE, &mut r);
    let zt = NoiseBatch::<f64>::sample(2, NOISE, &mut r);
    let fake_t = generate(&m.g_st, &xs_g, &zs).unwrap();
    let fake_s = generate(&m.g_ts, &xt_g, &zt).unwrap();
    let pseudo = assign_pseudo_labels(&m.c_s, &m.g_ts, &xt_g, &zt).unwrap();

    vec![
        (
            "L_Dt",
            check_gradients(&named(&[("d_t", &m.d_t)]), || lsgan_discriminator_loss(&m.d_t, &xt_d, &fake_t).unwrap(), EPS, None),
        ),
        (
            "L_Ct",
            check_gradients(
                &named(&[("g_st", &m.g_st), ("c_t", &m.c_t)]),
                || loss_ct(&m.g_st, &m.c_t, &xs_g, &zs, &ys).unwrap(),
                EPS,
                None,
            ),
        ),
        (
            "L_Ds",
            check_gradients(&named(&[("d_s", &m.d_s)]), || lsgan_discriminator_loss(&m.d_s, &xs_d, &fake_s).unwrap(), EPS, None),
        ),
        ("L_Cs", check_gradients(&named(&[("c_s", &m.c_s)]), || loss_cs(&m.c_s, &xs_d, &ys).unwrap(), EPS, None)),
        (
            "L_self",
            check_gradients(
                &named(&[("g_ts", &m.g_ts), ("c_s", &m.c_s)]),
                || loss_self(&m.g_ts, &m.c_s, &xt_g, &zt, &pseudo).unwrap(),
                EPS,
                None,
            ),
        ),
        (
            "L_cons",
            check_gradients(
                &named(&[("g_st", &m.g_st), ("g_ts", &m.g_ts), ("c_s", &m.c_s)]),
                || loss_consistency(&m.g_st, &m.g_ts, &m.c_s, &xs_g, &zs, &zt, &ys).unwrap(),
                EPS,
                None,
            ),
        ),
        (
            "generator adversarial",
            check_gradients(
                &named(&[("g_st", &m.g_st), ("d_t", &m.d_t)]),
                || lsgan_translation_loss(&m.d_t, &m.g_st, &xs_g, &zs).unwrap(),
                EPS,
                None,
            ),
        ),
        (
            "cycle reconstruction",
            check_gradients(
                &named(&[("g_st", &m.g_st), ("g_ts", &m.g_ts)]),
                || cycle_reconstruction_loss(&m.g_st, &m.g_ts, &xs_g, &zs, &zt).unwrap(),
                EPS,
                None,
            ),
        ),
    ]
}

/// 5,000 MNIST training digits (500 per class) stored with the tests.
pub fn mnist_subset() -> symgan_core::data::Dataset {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    symgan_core::data::settings::load_mnist_files(
        &dir.join("mnist-subset-images-idx3-ubyte.gz"),
        &dir.join("mnist-subset-labels-idx1-ubyte.gz"),
    )
    .unwrap()
}

/// Mean intra-class SSIM of the raw MNIST subset, 1000 pairs per class.
pub fn mnist_mean_ssim(cfg: &symgan_core::metrics::SsimConfig, seed: u64) -> f64 {
    let d = mnist_subset();
    let values: Vec<f64> = d.images.bytes().iter().map(|&b| f64::from(b)).collect();
    symgan_core::metrics::mean_intra_class_ssim(&values, d.images.shape(), d.labels.as_ref().unwrap(), 1000, seed, cfg)
        .unwrap()
        .mean
}

/// A synthetic task small enough to train for a few epochs in a test.
pub fn tiny_config() -> symgan_core::config::ExperimentConfig {
    use symgan_core::config::{ArchConfig, ExperimentConfig};
    let mut cfg = ExperimentConfig::desk();
    cfg.synthetic.size = 8;
    cfg.synthetic.source_samples = 48;
    cfg.synthetic.target_samples = 48;
    cfg.synthetic.classes = 4;
    cfg.arch = ArchConfig {
        generator_features: 4,
        discriminator_features: [4, 4],
        classifier_conv: [4, 4],
        classifier_hidden: [8, 8],
        ..cfg.arch
    };
    cfg.schedule.epochs = 2;
    cfg.schedule.eta_activation_epoch = 1;
    cfg.schedule.batch_size = 16;
    cfg.schedule.log_every = 1;
    cfg.ensemble.val_size = 16;
    cfg
}

pub fn tiny_pair(cfg: &symgan_core::config::ExperimentConfig) -> symgan_core::data::DomainPair {
    symgan_core::data::synthetic::synthetic_pair(&cfg.synthetic, cfg.ensemble.val_size, cfg.data_seed).unwrap()
}

/// `(term, library value, reference value)` for every network-level loss on
/// two-sample batches. References are assembled from public forward passes
/// and a hand-written softmax cross-entropy.
pub fn network_term_oracles(seed: u64) -> Vec<(&'static str, f64, f64)> {
    use symgan_core::data::{ImageBatch, LabelBatch, NoiseBatch};
    use symgan_core::losses::*;
    use symgan_core::models::{discriminate, generate, ModelState};
    use symgan_core::tensor::no_grad;

    let m = mini(seed);
    let mut r = rng(seed.wrapping_add(1000));
    let xs_g = images(2, PixelRange::GENERATOR, &mut r);
    let xt_g = images(2, PixelRange::GENERATOR, &mut r);
    let xs_d = images(2, PixelRange::DISCRIMINATIVE, &mut r);
    let xt_d = images(2, PixelRange::DISCRIMINATIVE, &mut r);
    let ys = LabelBatch::new(vec![1, 2], CLASSES).unwrap();
    let zs = NoiseBatch::<f64>::sample(2, NOISE, &mut r);
    let zt = NoiseBatch::<f64>::sample(2, NOISE, &mut r);
    let logits = |c: &ModelState<f64>, x: &ImageBatch<f64>| no_grad(|| c.forward_classifier(&x.to_tensor()).unwrap().to_vec());
    let mut out = Vec::new();

    let x_st = generate(&m.g_st, &xs_g, &zs).unwrap();
    out.push((
        "L_Ct",
        loss_ct(&m.g_st, &m.c_t, &xs_g, &zs, &ys).unwrap().item(),
        reference_ce(&logits(&m.c_t, &x_st), CLASSES, ys.labels()),
    ));
    out.push(("L_Cs", loss_cs(&m.c_s, &xs_d, &ys).unwrap().item(), reference_ce(&logits(&m.c_s, &xs_d), CLASSES, ys.labels())));

    let x_ts = generate(&m.g_ts, &xt_g, &zt).unwrap();
    let l = logits(&m.c_s, &x_ts);
    let pseudo: Vec<usize> = l.chunks(CLASSES).map(reference_argmax).collect();
    let assigned = assign_pseudo_labels(&m.c_s, &m.g_ts, &xt_g, &zt).unwrap();
    assert_eq!(assigned.labels(), pseudo.as_slice(), "pseudo-labels differ from the reference arg-max");
    out.push(("L_self", loss_self(&m.g_ts, &m.c_s, &xt_g, &zt, &assigned).unwrap().item(), reference_ce(&l, CLASSES, &pseudo)));

    // Round trip: the intermediate image is rescaled by 1/255 into the
    // generator range before the second translation.
    let mid: Vec<f64> = x_st.data().iter().map(|v| v / 255.0).collect();
    let mid = ImageBatch::new(mid, 2, shape(), PixelRange::GENERATOR).unwrap();
    let back = generate(&m.g_ts, &mid, &zt).unwrap();
    out.push((
        "L_cons",
        loss_consistency(&m.g_st, &m.g_ts, &m.c_s, &xs_g, &zs, &zt, &ys).unwrap().item(),
        reference_ce(&logits(&m.c_s, &back), CLASSES, ys.labels()),
    ));
    let cycle = mean(&back.data().iter().zip(xs_g.data()).map(|(b, x)| (b / 255.0 - x).abs()).collect::<Vec<_>>());
    out.push(("cycle", cycle_reconstruction_loss(&m.g_st, &m.g_ts, &xs_g, &zs, &zt).unwrap().item(), cycle));

    let sq = |v: &[f64], target: f64| mean(&v.iter().map(|x| (x - target).powi(2)).collect::<Vec<_>>());
    for (name, d, real, fake) in [("L_Dt", &m.d_t, &xt_d, &x_st), ("L_Ds", &m.d_s, &xs_d, &x_ts)] {
        let reference = sq(&discriminate(d, real).unwrap(), 1.0) + sq(&discriminate(d, fake).unwrap(), 0.0);
        out.push((name, lsgan_discriminator_loss(d, real, fake).unwrap().item(), reference));
    }
    let reference = sq(&discriminate(&m.d_t, &x_st).unwrap(), 1.0);
    out.push(("generator adversarial", lsgan_translation_loss(&m.d_t, &m.g_st, &xs_g, &zs).unwrap().item(), reference));

    // Fixed scores and probabilities worked out by hand.
    let scores = |v: &[f64]| symgan_core::tensor::Tensor::new(v.to_vec(), &[v.len(), 1]);
    out.push(("LSGAN scores", lsgan_discriminator_scores(&scores(&[0.2, 1.5]), &scores(&[0.3, -0.4])).item(), 0.445 + 0.125));
    let p = symgan_core::data::ProbBatch::new(vec![1.0, 0.0, 0.5, 0.5], 2).unwrap();
    out.push(("cross-entropy", cross_entropy(&p, &LabelBatch::new(vec![0, 0], 2).unwrap()).unwrap(), 0.5 * 2f64.ln()));
    out
}

/// Backpropagates the source classification loss alone and reports whether
/// the generators stayed gradient-free and the classifier did not.
pub fn source_classifier_gradient_flow(seed: u64) -> (bool, bool) {
    use symgan_core::data::LabelBatch;
    let m = mini(seed);
    let mut r = rng(seed.wrapping_add(1));
    let xs_d = images(2, PixelRange::DISCRIMINATIVE, &mut r);
    let gens = named(&[("g_st", &m.g_st), ("g_ts", &m.g_ts)]);
    let cls = named(&[("c_s", &m.c_s)]);
    symgan_core::losses::loss_cs(&m.c_s, &xs_d, &LabelBatch::new(vec![0, 2], CLASSES).unwrap()).unwrap().backward();
    (grads(&gens).iter().flatten().all(|&g| g == 0.0), grads(&cls).iter().flatten().any(|&g| g != 0.0))
}

/// With η = 0, adding the self-labeling term leaves every gradient
/// bit-identical, and the term alone yields no objective.
pub fn zero_eta_gates_self_labeling(seed: u64) -> bool {
    use symgan_core::data::{LabelBatch, NoiseBatch};
    use symgan_core::losses::*;
    let m = mini(seed);
    let mut r = rng(seed.wrapping_add(1));
    let xt_g = images(2, PixelRange::GENERATOR, &mut r);
    let xs_d = images(2, PixelRange::DISCRIMINATIVE, &mut r);
    let zt = NoiseBatch::<f64>::sample(2, NOISE, &mut r);
    let ys = LabelBatch::new(vec![0, 1], CLASSES).unwrap();
    let params = named(&[("g_ts", &m.g_ts), ("c_s", &m.c_s)]);
    let pseudo = assign_pseudo_labels(&m.c_s, &m.g_ts, &xt_g, &zt).unwrap();
    let w = LossWeights { eta: 0.0, ..LossWeights::default() };
    let build = || {
        vec![
            (Term::ClsS, loss_cs(&m.c_s, &xs_d, &ys).unwrap()),
            (Term::SelfLabel, loss_self(&m.g_ts, &m.c_s, &xt_g, &zt, &pseudo).unwrap()),
        ]
    };
    weighted_sum(&w, &build()).unwrap().backward();
    let with_gated = grads(&params);
    clear(&params);
    weighted_sum(&w, &build()[..1]).unwrap().backward();
    let without = grads(&params);
    let g_ts_untouched = with_gated[..m.g_ts.params().len()].iter().flatten().all(|&g| g == 0.0);
    let only_self = vec![(Term::SelfLabel, loss_self(&m.g_ts, &m.c_s, &xt_g, &zt, &pseudo).unwrap())];
    with_gated == without && g_ts_untouched && weighted_sum(&w, &only_self).is_none()
}
