//! Adam with bias correction and a serializable state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::checkpoint::ArrayFile;
use crate::models::Param;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if self.eps <= 0.0 {
            return Err(Error::config("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates for one network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    steps: u64,
    // Moments are kept in f32 so checkpoints restore them bit for bit.
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    shapes: Vec<(String, usize)>,
}

impl Adam {
    pub fn new<T: Real>(config: AdamConfig, params: &[&Param<T>]) -> Self {
        let shapes: Vec<_> = params.iter().map(|p| (p.name.clone(), p.tensor.len())).collect();
        Adam {
            config,
            steps: 0,
            m: shapes.iter().map(|(_, n)| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|(_, n)| vec![0.0; *n]).collect(),
            shapes,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the accumulated gradients. Parameters without
    /// a gradient are treated as having a zero gradient.
    pub fn step<T: Real>(&mut self, params: &[&Param<T>]) -> Result<()> {
        if params.len() != self.shapes.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.shapes.len(),
                params.len()
            )));
        }
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter().enumerate() {
            if p.tensor.len() != self.shapes[i].1 {
                return Err(Error::contract(format!("parameter {} changed size", p.name)));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            p.tensor.with_grad(|g| {
                p.tensor.update_data(|data| {
                    for j in 0..data.len() {
                        let gj = g.map_or(0.0, |g| g[j].to_f64().unwrap());
                        let mj = beta1 * f64::from(m[j]) + (1.0 - beta1) * gj;
                        let vj = beta2 * f64::from(v[j]) + (1.0 - beta2) * gj * gj;
                        m[j] = mj as f32;
                        v[j] = vj as f32;
                        let update = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
                        if update != 0.0 {
                            data[j] = T::from_f64_lossy(data[j].to_f64().unwrap() - update);
                        }
                    }
                })
            });
        }
        Ok(())
    }

    /// Stores the moments as `{prefix}{param}.m` / `.v` arrays.
    pub fn write_into(&self, file: &mut ArrayFile, prefix: &str) {
        for (i, (name, n)) in self.shapes.iter().enumerate() {
            file.push(format!("{prefix}{name}.m"), vec![*n], &self.m[i]);
            file.push(format!("{prefix}{name}.v"), vec![*n], &self.v[i]);
        }
    }

    /// Restores moments written by [`Adam::write_into`]; `steps` comes from
    /// the surrounding checkpoint metadata.
    pub fn read_from(&mut self, file: &ArrayFile, prefix: &str, steps: u64) -> Result<()> {
        for (i, (name, n)) in self.shapes.iter().enumerate() {
            for (suffix, dst) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let key = format!("{prefix}{name}.{suffix}");
                let (shape, data) = file
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks {key}")))?;
                if shape != [*n] {
                    return Err(Error::Checkpoint(format!("{key} has shape {shape:?}, expected [{n}]")));
                }
                *dst = data.to_vec();
            }
        }
        self.steps = steps;
        Ok(())
    }
}
