use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::check_gradients;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::parameter((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape)
}

fn assert_grads(params: &[(&str, &Tensor<f64>)], f: impl Fn() -> Tensor<f64>) {
    let named: Vec<(String, Tensor<f64>)> =
        params.iter().map(|(n, t)| (n.to_string(), (*t).clone())).collect();
    let report = check_gradients(&named, f, 1e-6, None);
    assert!(report.passes(1e-5), "gradient mismatch: {report:?}");
}

/// Fixed random projection turning any tensor into a scalar with
/// non-trivial upstream gradients.
fn project(t: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..t.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    t.mul(&Tensor::new(w, t.shape())).sum()
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn(&mut rng, &[3, 4]);
    let b = randn(&mut rng, &[3, 4]);
    assert_grads(&[("a", &a), ("b", &b)], || {
        let y = a.add(&b).mul(&a).sub(&b.scale(0.3)).tanh().add_scalar(0.1);
        project(&y.leaky_relu(0.2).relu(), 7)
    });
}

#[test]
fn matmul_bias_and_softmax_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = randn(&mut rng, &[4, 3]);
    let w = randn(&mut rng, &[3, 5]);
    let b = randn(&mut rng, &[5]);
    assert_grads(&[("x", &x), ("w", &w), ("b", &b)], || {
        let p = x.matmul(&w).add_bias(&b).softmax();
        p.nll_clipped(&[0, 4, 2, 1], 1e-7)
    });
}

#[test]
fn conv_and_pooling_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = randn(&mut rng, &[2, 5, 5, 2]);
    let w = randn(&mut rng, &[3, 3, 2, 3]);
    let w1 = randn(&mut rng, &[1, 1, 3, 2]);
    assert_grads(&[("x", &x), ("w", &w), ("w1", &w1)], || {
        let y = x.conv2d(&w, 2, 1).conv2d(&w1, 1, 0);
        project(&y.avg_pool2d(2), 5).add(&project(&x.conv2d(&w, 1, 1).max_pool2d(2), 6))
    });
}

#[test]
fn batch_norm_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(&mut rng, &[3, 2, 2, 3]);
    let g = randn(&mut rng, &[3]);
    let b = randn(&mut rng, &[3]);
    assert_grads(&[("x", &x), ("gamma", &g), ("beta", &b)], || {
        let (y, _) = x.batch_norm_train(&g, &b, 1e-3);
        project(&y, 9)
    });
    let mean = [0.1, -0.2, 0.3];
    let var = [0.5, 1.5, 2.0];
    assert_grads(&[("x", &x), ("gamma", &g), ("beta", &b)], || {
        project(&x.batch_norm_eval(&g, &b, &mean, &var, 1e-3), 10)
    });
}

#[test]
fn concat_reshape_and_losses_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = randn(&mut rng, &[2, 2, 2, 1]);
    let b = randn(&mut rng, &[2, 2, 2, 2]);
    let c = randn(&mut rng, &[2, 2, 2, 3]);
    assert_grads(&[("a", &a), ("b", &b), ("c", &c)], || {
        let cat = a.concat_last(&b);
        let flat = cat.flatten().reshape(&[2, 2, 2, 3]);
        flat.mse_to(1.0).add(&flat.abs_diff_mean(&c)).add(&c.mean())
    });
}

#[test]
fn shared_inputs_accumulate_gradients() {
    let x = Tensor::<f64>::parameter(vec![2.0], &[1]);
    let y = x.mul(&x).add(&x).sum();
    y.backward();
    assert_eq!(y.item(), 6.0);
    assert_eq!(x.grad().unwrap(), vec![5.0]);
}

#[test]
fn no_grad_produces_constants() {
    let x = Tensor::<f32>::parameter(vec![1.0, 2.0], &[2]);
    let y = no_grad(|| x.scale(2.0));
    assert!(!y.requires_grad());
    assert!(grad_enabled());
    let z = x.scale(2.0).sum();
    z.backward();
    assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
}

#[test]
fn detach_blocks_gradient_flow() {
    let x = Tensor::<f64>::parameter(vec![3.0], &[1]);
    let y = x.detach().mul(&x).sum();
    y.backward();
    assert_eq!(x.grad().unwrap(), vec![3.0]);
}

#[test]
fn conv_same_padding_preserves_spatial_shape() {
    let x = Tensor::<f32>::zeros(&[2, 7, 7, 3]);
    let w = Tensor::<f32>::zeros(&[3, 3, 3, 4]);
    assert_eq!(x.conv2d(&w, 1, 1).shape(), [2, 7, 7, 4]);
    assert_eq!(x.conv2d(&w, 2, 1).shape(), [2, 4, 4, 4]);
}

#[test]
fn conv_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = randn(&mut rng, &[1, 4, 4, 2]);
    let w = randn(&mut rng, &[3, 3, 2, 1]);
    let y = x.conv2d(&w, 1, 1);
    let (xd, wd) = (x.data(), w.data());
    for oy in 0..4 {
        for ox in 0..4 {
            let mut acc = 0.0;
            for ky in 0..3 {
                for kx in 0..3 {
                    let (iy, ix) = (oy as isize + ky as isize - 1, ox as isize + kx as isize - 1);
                    if !(0..4).contains(&iy) || !(0..4).contains(&ix) {
                        continue;
                    }
                    for c in 0..2 {
                        acc += xd[(iy as usize * 4 + ix as usize) * 2 + c] * wd[(ky * 3 + kx) * 2 + c];
                    }
                }
            }
            assert!((y.data()[oy * 4 + ox] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_rows_are_distributions_and_shift_invariant() {
    let x = Tensor::<f64>::new(vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0], &[2, 3]);
    let p = x.softmax();
    for row in p.data().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let q = x.add_scalar(100.0).softmax();
    for (a, b) in p.data().iter().zip(q.data().iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn clipped_nll_propagates_nan() {
    let logits = Tensor::new(vec![f64::NAN, 0.0, 1.0, 2.0], &[2, 2]);
    assert!(logits.softmax().nll_clipped(&[0, 1], 1e-7).item().is_nan());
    let fine = Tensor::new(vec![0.0, 50.0], &[1, 2]);
    assert!((fine.softmax().nll_clipped(&[0], 1e-7).item() - 1e-7f64.ln().abs()).abs() < 1e-9);
}
