//! The three network families: residual generators with a noise channel,
//! small convolutional discriminators and digit classifiers.
//!
//! A [`ModelState`] is an architecture descriptor plus the materialized
//! layers it describes. Forward passes walk the layer list in order.

mod arch;
pub mod checkpoint;

use std::cell::{Cell, RefCell};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use arch::{
    Activation, Arch, ClassifierArch, DiscriminatorArch, GeneratorArch, LayerKind, LayerSpec,
};

use crate::data::{ImageBatch, NoiseBatch, PixelRange, ProbBatch};
use crate::error::{Error, Result};
use crate::tensor::{no_grad, Real, Tensor};

/// Momentum of the running normalization statistics.
pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-3;
/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Whether normalization layers use batch statistics (and update their
/// running estimates) or the frozen running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// A named trainable array.
#[derive(Debug, Clone)]
pub struct Param<T: Real> {
    pub name: String,
    pub tensor: Tensor<T>,
}

struct BatchNorm<T: Real> {
    gamma: Param<T>,
    beta: Param<T>,
    running_mean: RefCell<Vec<T>>,
    running_var: RefCell<Vec<T>>,
}

struct Layer<T: Real> {
    spec: LayerSpec,
    params: Vec<Param<T>>,
    norm: Option<BatchNorm<T>>,
}

impl<T: Real> Layer<T> {
    fn build(spec: LayerSpec, rng: &mut impl Rng, init_std: f64) -> Self {
        if let LayerKind::BatchNorm { channels } = spec.kind {
            let mk = |name: String, v: f64| Param {
                name,
                tensor: Tensor::parameter(vec![T::from_f64_lossy(v); channels], &[channels]),
            };
            let shapes = spec.param_shapes();
            let norm = BatchNorm {
                gamma: mk(shapes[0].0.clone(), 1.0),
                beta: mk(shapes[1].0.clone(), 0.0),
                running_mean: RefCell::new(vec![T::zero(); channels]),
                running_var: RefCell::new(vec![T::one(); channels]),
            };
            return Layer { spec, params: Vec::new(), norm: Some(norm) };
        }
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".weight") {
                    (0..n).map(|_| T::from_f64_lossy(truncated_normal(rng, init_std))).collect()
                } else {
                    vec![T::zero(); n]
                };
                Param { name, tensor: Tensor::parameter(data, &shape) }
            })
            .collect();
        Layer { spec, params, norm: None }
    }

    fn all_params(&self) -> Vec<&Param<T>> {
        match &self.norm {
            Some(bn) => vec![&bn.gamma, &bn.beta],
            None => self.params.iter().collect(),
        }
    }

    fn forward(&self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let y = match (&self.spec.kind, &self.norm) {
            (LayerKind::Dense { .. }, _) => {
                x.matmul(&self.params[0].tensor).add_bias(&self.params[1].tensor)
            }
            (LayerKind::Conv { stride, pad, bias, .. }, _) => {
                let y = x.conv2d(&self.params[0].tensor, *stride, *pad);
                if *bias {
                    y.add_bias(&self.params[1].tensor)
                } else {
                    y
                }
            }
            (LayerKind::BatchNorm { .. }, Some(bn)) => {
                let eps = T::from_f64_lossy(BN_EPS);
                match mode {
                    Mode::Train => {
                        let (y, stats) = x.batch_norm_train(&bn.gamma.tensor, &bn.beta.tensor, eps);
                        let m = T::from_f64_lossy(BN_MOMENTUM);
                        let fold = |run: &RefCell<Vec<T>>, batch: &[T]| {
                            for (r, &b) in run.borrow_mut().iter_mut().zip(batch) {
                                *r = m * *r + (T::one() - m) * b;
                            }
                        };
                        fold(&bn.running_mean, &stats.mean);
                        fold(&bn.running_var, &stats.var);
                        y
                    }
                    Mode::Eval => x.batch_norm_eval(
                        &bn.gamma.tensor,
                        &bn.beta.tensor,
                        &bn.running_mean.borrow(),
                        &bn.running_var.borrow(),
                        eps,
                    ),
                }
            }
            (LayerKind::BatchNorm { .. }, None) => unreachable!("batch norm layer without state"),
        };
        activate(&y, self.spec.activation)
    }
}

fn activate<T: Real>(x: &Tensor<T>, act: Activation) -> Tensor<T> {
    match act {
        Activation::Identity => x.clone(),
        Activation::Relu => x.relu(),
        Activation::LeakyRelu { slope } => x.leaky_relu(T::from_f64_lossy(slope)),
        Activation::ScaledTanh { scale } => x.tanh().scale(T::from_f64_lossy(scale)),
    }
}

/// Normal sample with `|x| <= 2 std`, redrawn otherwise.
fn truncated_normal(rng: &mut impl Rng, std: f64) -> f64 {
    loop {
        let v: f64 = rng.sample(rand_distr::StandardNormal);
        if v.abs() <= 2.0 {
            return v * std;
        }
    }
}

/// Parameters, architecture and normalization mode of one network.
pub struct ModelState<T: Real = f32> {
    arch: Arch,
    layers: Vec<Layer<T>>,
    mode: Cell<Mode>,
}

impl<T: Real> std::fmt::Debug for ModelState<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelState")
            .field("arch", &self.arch)
            .field("params", &self.param_count())
            .field("mode", &self.mode.get())
            .finish()
    }
}

/// Sequential cursor over the layer list of a forward pass.
struct Cursor<'a, T: Real> {
    layers: std::slice::Iter<'a, Layer<T>>,
    mode: Mode,
}

impl<T: Real> Cursor<'_, T> {
    fn apply(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.layers.next().expect("layer list exhausted").forward(x, self.mode)
    }
}

impl<T: Real> ModelState<T> {
    /// Materializes `arch` with freshly initialized parameters.
    pub fn build(arch: Arch, init_std: f64, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layers().into_iter().map(|s| Layer::build(s, rng, init_std)).collect();
        Ok(ModelState { arch, layers, mode: Cell::new(Mode::Train) })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn mode(&self) -> Mode {
        self.mode.get()
    }

    pub fn set_mode(&self, mode: Mode) {
        self.mode.set(mode);
    }

    fn cursor(&self) -> Cursor<'_, T> {
        Cursor { layers: self.layers.iter(), mode: self.mode.get() }
    }

    /// Trainable parameters in layer order.
    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(Layer::all_params).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grad(&self) {
        for p in self.params() {
            p.tensor.zero_grad();
        }
    }

    /// Running normalization statistics as `(name, values)`.
    pub fn buffers(&self) -> Vec<(String, Vec<T>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Some(bn) = &layer.norm {
                let names = layer.spec.buffer_shapes();
                out.push((names[0].0.clone(), bn.running_mean.borrow().clone()));
                out.push((names[1].0.clone(), bn.running_var.borrow().clone()));
            }
        }
        out
    }

    pub fn set_buffer(&self, name: &str, values: &[T]) -> Result<()> {
        for layer in &self.layers {
            if let Some(bn) = &layer.norm {
                let names = layer.spec.buffer_shapes();
                let slot = if names[0].0 == name {
                    &bn.running_mean
                } else if names[1].0 == name {
                    &bn.running_var
                } else {
                    continue;
                };
                let mut dst = slot.borrow_mut();
                if dst.len() != values.len() {
                    return Err(Error::Checkpoint(format!(
                        "buffer {name} has {} values, expected {}",
                        values.len(),
                        dst.len()
                    )));
                }
                dst.copy_from_slice(values);
                return Ok(());
            }
        }
        Err(Error::Checkpoint(format!("unknown buffer {name}")))
    }

    /// Copies parameters and buffers from another network of the same
    /// architecture.
    pub fn copy_from(&self, other: &ModelState<T>) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::contract("cannot copy between different architectures"));
        }
        for (a, b) in self.params().into_iter().zip(other.params()) {
            a.tensor.set_data(&b.tensor.data());
        }
        for (name, values) in other.buffers() {
            self.set_buffer(&name, &values)?;
        }
        Ok(())
    }

    fn expect_input(&self, x: &Tensor<T>) -> Result<()> {
        let img = self.arch.image();
        let s = x.shape();
        if s.len() != 4 || s[1] != img.height || s[2] != img.width || s[3] != img.channels {
            return Err(Error::contract(format!(
                "{} expects (B, {}, {}, {}) inputs, got {s:?}",
                self.arch.kind_name(),
                img.height,
                img.width,
                img.channels
            )));
        }
        if s[0] == 0 {
            return Err(Error::Empty(format!("{} input batch", self.arch.kind_name())));
        }
        Ok(())
    }

    /// Generator forward pass on raw tensors: `x` is `(B, H, W, C)` in the
    /// generator input range, `z` is `(B, Nz)`.
    pub fn forward_generator(&self, x: &Tensor<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        let Arch::Generator(a) = &self.arch else {
            return Err(Error::contract(format!("{} used as a generator", self.arch.kind_name())));
        };
        self.expect_input(x)?;
        let b = x.shape()[0];
        let mut cur = self.cursor();
        let mut h = if a.noise_dim > 0 {
            if z.shape() != [b, a.noise_dim] {
                return Err(Error::contract(format!(
                    "noise must be ({b}, {}), got {:?}",
                    a.noise_dim,
                    z.shape()
                )));
            }
            let plane = cur.apply(z).reshape(&[b, a.image.height, a.image.width, 1]);
            x.concat_last(&plane)
        } else {
            x.clone()
        };
        h = cur.apply(&h);
        h = cur.apply(&h);
        for _ in 0..a.residual_blocks {
            let mut r = cur.apply(&h);
            r = cur.apply(&r);
            r = cur.apply(&r);
            r = cur.apply(&r);
            h = h.add(&r);
        }
        Ok(cur.apply(&h))
    }

    /// Discriminator forward pass returning `(B, 1)` unbounded scores.
    pub fn forward_discriminator(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let Arch::Discriminator(a) = &self.arch else {
            return Err(Error::contract(format!(
                "{} used as a discriminator",
                self.arch.kind_name()
            )));
        };
        self.expect_input(x)?;
        let b = x.shape()[0];
        let mut cur = self.cursor();
        let mut h = x.clone();
        for _ in 0..4 {
            h = cur.apply(&h);
        }
        h = h.avg_pool2d(a.pool_size());
        Ok(cur.apply(&h).reshape(&[b, 1]))
    }

    /// Classifier forward pass returning `(B, K)` logits.
    pub fn forward_classifier(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if !matches!(self.arch, Arch::Classifier(_)) {
            return Err(Error::contract(format!("{} used as a classifier", self.arch.kind_name())));
        }
        self.expect_input(x)?;
        let mut cur = self.cursor();
        let h = cur.apply(x).max_pool2d(2);
        let h = cur.apply(&h).max_pool2d(2).flatten();
        let h = cur.apply(&h);
        let h = cur.apply(&h);
        Ok(cur.apply(&h))
    }

    pub fn generator_arch(&self) -> Option<&GeneratorArch> {
        match &self.arch {
            Arch::Generator(a) => Some(a),
            _ => None,
        }
    }
}

/// Translates images with a generator. Inputs must be in the generator
/// input range; outputs are in the discriminative range.
pub fn generate<T: Real>(
    g: &ModelState<T>,
    x: &ImageBatch<T>,
    z: &NoiseBatch<T>,
) -> Result<ImageBatch<T>> {
    let a = g
        .generator_arch()
        .ok_or_else(|| Error::contract("generate() needs a generator"))?;
    x.require_range(PixelRange::GENERATOR, "generator")?;
    if z.len() != x.len() || z.dim() != a.noise_dim {
        return Err(Error::contract(format!(
            "noise batch ({}, {}) does not match images ({}) and Nz = {}",
            z.len(),
            z.dim(),
            x.len(),
            a.noise_dim
        )));
    }
    let y = no_grad(|| g.forward_generator(&x.to_tensor(), &z.to_tensor()))?;
    let s = a.output_scale;
    ImageBatch::from_tensor(&y, PixelRange { lo: -s, hi: s })
}

/// One real-valued score per image.
pub fn discriminate<T: Real>(d: &ModelState<T>, x: &ImageBatch<T>) -> Result<Vec<T>> {
    x.require_range(PixelRange::DISCRIMINATIVE, "discriminator")?;
    let y = no_grad(|| d.forward_discriminator(&x.to_tensor()))?;
    Ok(y.to_vec())
}

/// Class probabilities (softmax of the logits).
pub fn classify<T: Real>(c: &ModelState<T>, x: &ImageBatch<T>) -> Result<ProbBatch> {
    x.require_range(PixelRange::DISCRIMINATIVE, "classifier")?;
    let p = no_grad(|| c.forward_classifier(&x.to_tensor()).map(|l| l.softmax()))?;
    ProbBatch::from_tensor(&p)
}
