//! PCA followed by exact t-SNE, for 2-D views of image distributions.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and low momentum.
    pub exaggeration_iterations: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig { perplexity: 30.0, iterations: 1000, learning_rate: 200.0, early_exaggeration: 12.0, exaggeration_iterations: 250 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub requested_components: usize,
    pub pca_components: usize,
    pub tsne: TsneConfig,
    /// Perplexity actually used (capped for very small inputs).
    pub effective_perplexity: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub points: Vec<[f64; 2]>,
    pub meta: EmbeddingMeta,
}

/// Projects the rows of `x` (`n x d`, row-major) onto their top `k`
/// principal components. Returns the `n x k'` scores with `k' <= k`, reduced
/// when the data has lower rank.
pub fn pca(x: &[f64], n: usize, d: usize, k: usize) -> Result<(Vec<f64>, usize)> {
    if x.len() != n * d {
        return Err(Error::contract(format!("{} values for {n} x {d} data", x.len())));
    }
    if n == 0 || d == 0 {
        return Err(Error::Empty("PCA of empty data".into()));
    }
    let mut m = DMatrix::from_row_slice(n, d, x);
    for mut col in m.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let rank_bound = (n - 1).min(d).max(1);
    let k_eff = k.min(rank_bound);
    if k_eff < k {
        log::warn!("PCA reduced from {k} to {k_eff} components for {n} samples of dimension {d}");
    }
    // Decompose whichever Gram matrix is smaller.
    let scores = if d <= n {
        let cov = m.transpose() * &m;
        let eig = SymmetricEigen::new(cov);
        let order = sorted_desc(eig.eigenvalues.as_slice());
        let basis = DMatrix::from_fn(d, k_eff, |r, c| eig.eigenvectors[(r, order[c])]);
        &m * basis
    } else {
        let gram = &m * m.transpose();
        let eig = SymmetricEigen::new(gram);
        let order = sorted_desc(eig.eigenvalues.as_slice());
        DMatrix::from_fn(n, k_eff, |r, c| {
            let lam = eig.eigenvalues[order[c]].max(0.0);
            eig.eigenvectors[(r, order[c])] * lam.sqrt()
        })
    };
    let mut out = Vec::with_capacity(n * k_eff);
    for r in 0..n {
        for c in 0..k_eff {
            out.push(scores[(r, c)]);
        }
    }
    Ok((out, k_eff))
}

fn sorted_desc(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

fn squared_distances(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = (0..d).map(|k| (x[i * d + k] - x[j * d + k]).powi(2)).sum();
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    out
}

/// Symmetrized input affinities with per-point bandwidths matched to the
/// perplexity by bisection.
fn affinities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        let min_d = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
        for _ in 0..100 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                // Shifting by the smallest distance avoids underflow.
                let e = (-(row[j] - min_d) * beta).exp();
                p[i * n + j] = e;
                sum += e;
                weighted += e * (row[j] - min_d);
            }
            let entropy = sum.ln() + beta * weighted / sum;
            for j in 0..n {
                p[i * n + j] /= sum;
            }
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }
    sym
}

/// Exact t-SNE of `n` points of dimension `d` into two dimensions.
pub fn tsne(x: &[f64], n: usize, d: usize, cfg: &TsneConfig, seed: u64) -> Result<(Vec<[f64; 2]>, f64)> {
    if n < 3 {
        return Err(Error::contract(format!("t-SNE needs at least 3 points, got {n}")));
    }
    if x.len() != n * d {
        return Err(Error::contract(format!("{} values for {n} x {d} data", x.len())));
    }
    // The perplexity cannot exceed the number of neighbours.
    let perplexity = cfg.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let p = affinities(&squared_distances(x, n, d), n, perplexity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| init.sample(&mut rng)).collect();
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];
    for it in 0..cfg.iterations {
        let exaggerate = it < cfg.exaggeration_iterations;
        let (ex, momentum) = if exaggerate { (cfg.early_exaggeration, 0.5) } else { (1.0, 0.8) };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dy0 = y[2 * i] - y[2 * j];
                let dy1 = y[2 * i + 1] - y[2 * j + 1];
                let q = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        for i in 0..n {
            let (mut g0, mut g1) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let m = (ex * p[i * n + j] - q / z) * q;
                g0 += m * (y[2 * i] - y[2 * j]);
                g1 += m * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * g0;
            grad[2 * i + 1] = 4.0 * g1;
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) { gains[k] + 0.2 } else { (gains[k] * 0.8_f64).max(0.01) };
            velocity[k] = momentum * velocity[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            for i in 0..n {
                y[2 * i + c] -= mean;
            }
        }
    }
    Ok(((0..n).map(|i| [y[2 * i], y[2 * i + 1]]).collect(), perplexity))
}

/// Flattened rows scaled to `[-1, 1]` are reduced to `n_pca` components and
/// then embedded in the plane.
pub fn embed_2d(x: &[f64], n: usize, d: usize, n_pca: usize, cfg: &TsneConfig, seed: u64) -> Result<Embedding> {
    if n < 3 {
        return Err(Error::contract(format!("embedding needs at least 3 samples, got {n}")));
    }
    let (reduced, k) = pca(x, n, d, n_pca)?;
    let (points, effective_perplexity) = tsne(&reduced, n, k, cfg, seed)?;
    Ok(Embedding {
        points,
        meta: EmbeddingMeta { requested_components: n_pca, pca_components: k, tsne: cfg.clone(), effective_perplexity, seed },
    })
}
