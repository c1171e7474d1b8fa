mod common;

use common::*;

#[test]
fn every_term_matches_finite_differences() {
    for seed in [1, 2] {
        for (name, report) in loss_gradient_reports(seed) {
            println!("{name}: {} entries, max rel error {:.2e}", report.checked, report.max_rel_error);
            assert!(report.passes(1e-3), "{name} (seed {seed}): {report:?}");
        }
    }
}

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use symgan_core::data::{LabelBatch, NoiseBatch, PixelRange, ProbBatch};
use symgan_core::losses::*;
use symgan_core::tensor::Tensor;

const TOL: f64 = 1e-6;

fn probs(rows: &[&[f64]]) -> ProbBatch {
    ProbBatch::new(rows.concat(), rows[0].len()).unwrap()
}

fn labels(y: &[usize], k: usize) -> LabelBatch {
    LabelBatch::new(y.to_vec(), k).unwrap()
}

#[test]
fn cross_entropy_examples() {
    assert_abs_diff_eq!(cross_entropy(&probs(&[&[1.0, 0.0]]), &labels(&[0], 2)).unwrap(), 0.0, epsilon = TOL);
    assert_abs_diff_eq!(cross_entropy(&probs(&[&[0.5, 0.5]]), &labels(&[0], 2)).unwrap(), 2f64.ln(), epsilon = TOL);
    let batch = probs(&[&[1.0, 0.0], &[0.5, 0.5]]);
    assert_abs_diff_eq!(cross_entropy(&batch, &labels(&[0, 0], 2)).unwrap(), 0.346_573_590_3, epsilon = TOL);
    // A zero probability is clipped to 1e-7 rather than producing infinity.
    assert_abs_diff_eq!(cross_entropy(&probs(&[&[1.0, 0.0]]), &labels(&[1], 2)).unwrap(), 16.118_095_65, epsilon = 1e-6);
    assert!(cross_entropy(&batch, &labels(&[0], 2)).is_err());
    assert!(ProbBatch::new(vec![0.7, 0.7], 2).is_err());
}

fn scores(v: &[f64]) -> Tensor<f64> {
    Tensor::new(v.to_vec(), &[v.len(), 1])
}

#[test]
fn least_squares_examples() {
    let d = |r: &[f64], f: &[f64]| lsgan_discriminator_scores(&scores(r), &scores(f)).item();
    assert_abs_diff_eq!(d(&[1.0, 1.0], &[0.0, 0.0]), 0.0, epsilon = TOL);
    assert_abs_diff_eq!(d(&[0.0, 0.0], &[1.0, 1.0]), 2.0, epsilon = TOL);
    assert_abs_diff_eq!(d(&[0.5, 0.5], &[0.5, 0.5]), 0.5, epsilon = TOL);
    let g = |f: &[f64]| lsgan_generator_scores(&scores(f)).item();
    assert_abs_diff_eq!(g(&[1.0, 1.0]), 0.0, epsilon = TOL);
    assert_abs_diff_eq!(g(&[0.0, 0.0]), 1.0, epsilon = TOL);
    assert_abs_diff_eq!(g(&[0.5, 0.5]), 0.25, epsilon = TOL);
    // Hand-built two-sample batch: ((0.2-1)^2 + (1.5-1)^2)/2 + (0.3^2 + (-0.4)^2)/2.
    assert_abs_diff_eq!(d(&[0.2, 1.5], &[0.3, -0.4]), 0.445 + 0.125, epsilon = TOL);
}

#[test]
fn total_loss_is_the_weighted_sum() {
    let ones: Vec<(Term, f64)> = Term::ALL.iter().map(|&t| (t, 1.0)).collect();
    let report = total_loss(&LossWeights::default(), &ones).unwrap();
    assert_abs_diff_eq!(report.total, 24.0, epsilon = TOL);
    assert_eq!(report.terms.len(), 6);
    let values = [0.3, 1.7, 0.2, 0.9, 2.5, 0.4];
    let w = LossWeights::new(0.5, 2.0, 1.5, 3.0, 0.25, 4.0).unwrap();
    let terms: Vec<(Term, f64)> = Term::ALL.iter().copied().zip(values).collect();
    let expected = 0.5 * 0.3 + 2.0 * 1.7 + 1.5 * 0.2 + 3.0 * 0.9 + 0.25 * 2.5 + 4.0 * 0.4;
    assert_abs_diff_eq!(total_loss(&w, &terms).unwrap().total, expected, epsilon = TOL);
    let mut gated = w;
    gated.eta = 0.0;
    let r = total_loss(&gated, &terms).unwrap();
    assert!(r.term(Term::SelfLabel).is_none());
    assert_abs_diff_eq!(r.total, expected - 0.25 * 2.5, epsilon = TOL);
    assert!(LossWeights::new(1.0, -1.0, 1.0, 1.0, 1.0, 1.0).is_err());
}

#[test]
fn network_terms_match_reference_computations() {
    for seed in [3, 4] {
        for (name, got, expected) in network_term_oracles(seed) {
            assert!((got - expected).abs() <= TOL, "{name}: {got} vs {expected}");
        }
    }
}

#[test]
fn degenerate_networks_give_closed_form_values() {
    let m = mini(5);
    let mut r = rng(6);
    let xs_g = images(2, PixelRange::GENERATOR, &mut r);
    let xs_d = images(2, PixelRange::DISCRIMINATIVE, &mut r);
    let zs = NoiseBatch::<f64>::sample(2, NOISE, &mut r);
    let zt = NoiseBatch::<f64>::sample(2, NOISE, &mut r);
    // A classifier without parameters is uniform: cross-entropy ln K.
    zero_params(&m.c_s);
    let k = CLASSES as f64;
    assert_abs_diff_eq!(loss_cs(&m.c_s, &xs_d, &labels(&[0, 1], CLASSES)).unwrap().item(), k.ln(), epsilon = TOL);
    // Generators without parameters output a constant 0, so the cycle
    // error is the mean absolute input.
    zero_params(&m.g_st);
    zero_params(&m.g_ts);
    let expected = mean(&xs_g.data().iter().map(|v| v.abs()).collect::<Vec<_>>());
    assert_abs_diff_eq!(cycle_reconstruction_loss(&m.g_st, &m.g_ts, &xs_g, &zs, &zt).unwrap().item(), expected, epsilon = TOL);
    // A discriminator without parameters scores everything 0.
    zero_params(&m.d_t);
    assert_abs_diff_eq!(lsgan_discriminator_loss(&m.d_t, &xs_d, &xs_d).unwrap().item(), 1.0, epsilon = TOL);
}

#[test]
fn source_classifier_loss_never_reaches_the_generators() {
    let (generators_untouched, classifier_moved) = source_classifier_gradient_flow(7);
    assert!(generators_untouched && classifier_moved);
}

#[test]
fn zero_eta_removes_the_self_labeling_gradient() {
    assert!(zero_eta_gates_self_labeling(9));
}

#[test]
fn doubling_a_weight_doubles_its_gradient_contribution() {
    let m = mini(11);
    let mut r = rng(12);
    let xs_g = images(2, PixelRange::GENERATOR, &mut r);
    let xs_d = images(2, PixelRange::DISCRIMINATIVE, &mut r);
    let zs = NoiseBatch::<f64>::sample(2, NOISE, &mut r);
    let ys = labels(&[2, 0], CLASSES);
    let params = named(&[("g_st", &m.g_st), ("c_t", &m.c_t), ("c_s", &m.c_s)]);
    let run = |beta: f64, mu: f64| {
        clear(&params);
        let w = LossWeights::new(1.0, beta, 1.0, mu, 1.0, 1.0).unwrap();
        let terms = vec![
            (Term::ClsT, loss_ct(&m.g_st, &m.c_t, &xs_g, &zs, &ys).unwrap()),
            (Term::ClsS, loss_cs(&m.c_s, &xs_d, &ys).unwrap()),
        ];
        weighted_sum(&w, &terms).unwrap().backward();
        grads(&params).concat()
    };
    let base = run(1.0, 1.0);
    let doubled = run(2.0, 1.0);
    let alone = run(1.0, 0.0);
    for i in 0..base.len() {
        let cs_part = base[i] - alone[i];
        assert_abs_diff_eq!(doubled[i], 2.0 * alone[i] + cs_part, epsilon = 1e-9 * (1.0 + base[i].abs()));
    }
}

#[test]
fn pseudo_label_ties_go_to_the_lowest_class() {
    assert_eq!(pseudo_labels_from_probs(&probs(&[&[0.1, 0.9], &[0.5, 0.5]])).labels(), &[1, 0]);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(v in prop::collection::vec(-200.0f64..200.0, 1..40), k in 1usize..8) {
        let n = v.len() / k;
        prop_assume!(n > 0);
        let t = Tensor::new(v[..n * k].to_vec(), &[n, k]).softmax();
        for row in t.to_vec().chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        let t32 = Tensor::<f32>::new(v[..n * k].iter().map(|&x| x as f32).collect(), &[n, k]).softmax();
        for row in t32.to_vec().chunks(k) {
            prop_assert!((row.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn pseudo_labels_survive_monotone_transforms(v in prop::collection::vec(0.0f64..1.0, 4..40), scale in 0.01f64..100.0) {
        let k = 4;
        let n = v.len() / k;
        let raw = &v[..n * k];
        let logits = Tensor::new(raw.to_vec(), &[n, k]);
        let base = pseudo_labels_from_logits(&logits).unwrap();
        for f in [|x: f64| x.exp(), |x: f64| x.powi(3), |x: f64| (x + 1.0).ln()] {
            let t = Tensor::new(raw.iter().map(|&x| f(x)).collect(), &[n, k]);
            prop_assert_eq!(pseudo_labels_from_logits(&t).unwrap(), base.clone());
        }
        let scaled = Tensor::new(raw.iter().map(|&x| x * scale).collect(), &[n, k]);
        prop_assert_eq!(pseudo_labels_from_logits(&scaled).unwrap(), base);
    }

    #[test]
    fn losses_are_nonnegative(r in prop::collection::vec(-5.0f64..5.0, 1..10), f in prop::collection::vec(-5.0f64..5.0, 1..10),
                              p in prop::collection::vec(0.0f64..1.0, 2..20), y in 0usize..2) {
        prop_assert!(lsgan_discriminator_scores(&scores(&r), &scores(&f)).item() >= 0.0);
        prop_assert!(lsgan_generator_scores(&scores(&f)).item() >= 0.0);
        let rows: Vec<f64> = p.iter().flat_map(|&a| [a, 1.0 - a]).collect();
        let n = rows.len() / 2;
        let pb = ProbBatch::new(rows, 2).unwrap();
        prop_assert!(cross_entropy(&pb, &LabelBatch::new(vec![y; n], 2).unwrap()).unwrap() >= 0.0);
    }

    #[test]
    fn total_is_linear_in_each_weight(values in prop::array::uniform6(0.0f64..10.0), w in prop::array::uniform6(0.0f64..10.0), which in 0usize..6) {
        let terms: Vec<(Term, f64)> = Term::ALL.iter().copied().zip(values).collect();
        let base = LossWeights::new(w[0], w[1], w[2], w[3], w[4], w[5]).unwrap();
        let mut doubled = base;
        doubled.set(Term::ALL[which], 2.0 * w[which]);
        let a = total_loss(&base, &terms).unwrap().total;
        let b = total_loss(&doubled, &terms).unwrap().total;
        prop_assert!((b - a - w[which] * values[which]).abs() < 1e-9 * (1.0 + a.abs()));
    }
}
