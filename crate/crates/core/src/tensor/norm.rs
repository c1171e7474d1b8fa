use super::{Op, Real, Tensor};

/// Per-channel statistics of one training-mode batch normalization call.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (Bessel-corrected) variance, as folded into running estimates.
    pub var: Vec<T>,
}

struct BatchNormTrainOp<T> {
    channels: usize,
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> Op<T> for BatchNormTrainOp<T> {
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let c = self.channels;
        let n = T::from_usize(g.len() / c).unwrap();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for (gr, xr) in g.chunks_exact(c).zip(self.xhat.chunks_exact(c)) {
            for ch in 0..c {
                sum_g[ch] += gr[ch];
                sum_gx[ch] += gr[ch] * xr[ch];
            }
        }
        let gx = inputs[0].requires_grad().then(|| {
            let gamma = inputs[1].data();
            let mut gx = vec![T::zero(); g.len()];
            for ((dst, gr), xr) in gx
                .chunks_exact_mut(c)
                .zip(g.chunks_exact(c))
                .zip(self.xhat.chunks_exact(c))
            {
                for ch in 0..c {
                    let k = gamma[ch] * self.inv_std[ch] / n;
                    dst[ch] = k * (n * gr[ch] - sum_g[ch] - xr[ch] * sum_gx[ch]);
                }
            }
            gx
        });
        vec![gx, Some(sum_gx), Some(sum_g)]
    }
}

struct BatchNormEvalOp<T> {
    channels: usize,
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> Op<T> for BatchNormEvalOp<T> {
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let c = self.channels;
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for (gr, xr) in g.chunks_exact(c).zip(self.xhat.chunks_exact(c)) {
            for ch in 0..c {
                sum_g[ch] += gr[ch];
                sum_gx[ch] += gr[ch] * xr[ch];
            }
        }
        let gx = inputs[0].requires_grad().then(|| {
            let gamma = inputs[1].data();
            let scale: Vec<T> = (0..c).map(|ch| gamma[ch] * self.inv_std[ch]).collect();
            let mut gx = g.to_vec();
            for row in gx.chunks_exact_mut(c) {
                for (v, &s) in row.iter_mut().zip(&scale) {
                    *v *= s;
                }
            }
            gx
        });
        vec![gx, Some(sum_gx), Some(sum_g)]
    }
}

fn check_affine<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> usize {
    let c = *x.shape().last().expect("batch norm on a scalar");
    assert_eq!(gamma.shape(), [c], "batch norm: gamma must have one entry per channel");
    assert_eq!(beta.shape(), [c], "batch norm: beta must have one entry per channel");
    c
}

impl<T: Real> Tensor<T> {
    /// Training-mode batch normalization over every dimension except the
    /// last (channel) one. Returns the normalized tensor and the batch
    /// statistics for the caller to fold into running estimates.
    pub fn batch_norm_train(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: T,
    ) -> (Tensor<T>, BatchStats<T>) {
        let c = check_affine(self, gamma, beta);
        let x = self.data();
        let count = x.len() / c;
        assert!(count > 0, "batch norm over an empty batch");
        let nf = T::from_usize(count).unwrap();
        let mut mean = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m = *m / nf;
        }
        let mut var = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            for ch in 0..c {
                let d = row[ch] - mean[ch];
                var[ch] += d * d;
            }
        }
        let biased: Vec<T> = var.iter().map(|&s| s / nf).collect();
        let unbiased: Vec<T> = if count > 1 {
            var.iter().map(|&s| s / T::from_usize(count - 1).unwrap()).collect()
        } else {
            biased.clone()
        };
        let inv_std: Vec<T> = biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (gamma.data(), beta.data());
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for ((xr, hr), or) in x
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c))
            .zip(out.chunks_exact_mut(c))
        {
            for ch in 0..c {
                hr[ch] = (xr[ch] - mean[ch]) * inv_std[ch];
                or[ch] = g[ch] * hr[ch] + b[ch];
            }
        }
        drop((x, g, b));
        let y = Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            BatchNormTrainOp { channels: c, xhat, inv_std },
        );
        (y, BatchStats { mean, var: unbiased })
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Tensor<T> {
        let c = check_affine(self, gamma, beta);
        assert!(mean.len() == c && var.len() == c, "batch norm: running stats size");
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let x = self.data();
        let (g, b) = (gamma.data(), beta.data());
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for ((xr, hr), or) in x
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c))
            .zip(out.chunks_exact_mut(c))
        {
            for ch in 0..c {
                hr[ch] = (xr[ch] - mean[ch]) * inv_std[ch];
                or[ch] = g[ch] * hr[ch] + b[ch];
            }
        }
        drop((x, g, b));
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            BatchNormEvalOp { channels: c, xhat, inv_std },
        )
    }
}
