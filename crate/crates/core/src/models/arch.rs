use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{Error, Result};

/// Pointwise non-linearity applied after a layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { slope: f64 },
    /// `scale * tanh(x)`; bounds outputs to `(-scale, scale)`.
    ScaledTanh { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        kernel: usize,
        inputs: usize,
        outputs: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
}

/// One entry of an architecture's layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    fn new(name: impl Into<String>, kind: LayerKind, activation: Activation) -> Self {
        LayerSpec { name: name.into(), kind, activation }
    }

    /// Trainable parameters as `(name, shape)`.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let n = &self.name;
        match self.kind {
            LayerKind::Dense { inputs, outputs } => vec![
                (format!("{n}.weight"), vec![inputs, outputs]),
                (format!("{n}.bias"), vec![outputs]),
            ],
            LayerKind::Conv { kernel, inputs, outputs, bias, .. } => {
                let mut v = vec![(format!("{n}.weight"), vec![kernel, kernel, inputs, outputs])];
                if bias {
                    v.push((format!("{n}.bias"), vec![outputs]));
                }
                v
            }
            LayerKind::BatchNorm { channels } => vec![
                (format!("{n}.gamma"), vec![channels]),
                (format!("{n}.beta"), vec![channels]),
            ],
        }
    }

    /// Non-trainable state (running normalization statistics).
    pub fn buffer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self.kind {
            LayerKind::BatchNorm { channels } => vec![
                (format!("{}.running_mean", self.name), vec![channels]),
                (format!("{}.running_var", self.name), vec![channels]),
            ],
            _ => Vec::new(),
        }
    }
}

/// Residual image-to-image generator with a noise channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorArch {
    pub image: ImageShape,
    pub noise_dim: usize,
    pub features: usize,
    pub residual_blocks: usize,
    /// Half-width of the output range.
    pub output_scale: f64,
}

/// Two strided convolutions, average pooling and a collapsing convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorArch {
    pub image: ImageShape,
    pub features: [usize; 2],
    pub leaky_slope: f64,
}

/// Two convolution + max-pooling stages followed by fully connected layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub image: ImageShape,
    pub classes: usize,
    pub conv: [usize; 2],
    pub hidden: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "network")]
pub enum Arch {
    Generator(GeneratorArch),
    Discriminator(DiscriminatorArch),
    Classifier(ClassifierArch),
}

/// Output size of a 3x3, stride-2, pad-1 convolution.
fn halve(n: usize) -> usize {
    n.div_ceil(2)
}

impl DiscriminatorArch {
    /// Spatial size after the two strided convolutions.
    pub fn conv_output(&self) -> (usize, usize) {
        (halve(halve(self.image.height)), halve(halve(self.image.width)))
    }

    /// Average-pooling window; 1 when the feature map is already a pixel wide.
    pub fn pool_size(&self) -> usize {
        let (h, w) = self.conv_output();
        if h.min(w) >= 2 {
            2
        } else {
            1
        }
    }

    /// Spatial size after pooling, collapsed by the final convolution.
    pub fn pooled(&self) -> (usize, usize) {
        let (h, w) = self.conv_output();
        let p = self.pool_size();
        (h / p, w / p)
    }
}

impl ClassifierArch {
    pub fn flat_features(&self) -> usize {
        (self.image.height / 4) * (self.image.width / 4) * self.conv[1]
    }
}

impl Arch {
    pub fn image(&self) -> ImageShape {
        match self {
            Arch::Generator(a) => a.image,
            Arch::Discriminator(a) => a.image,
            Arch::Classifier(a) => a.image,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Arch::Generator(_) => "generator",
            Arch::Discriminator(_) => "discriminator",
            Arch::Classifier(_) => "classifier",
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.image().validate()?;
        match self {
            Arch::Generator(a) => {
                if a.features == 0 {
                    return Err(Error::config("generator needs at least one feature"));
                }
                if a.output_scale <= 0.0 {
                    return Err(Error::config("generator output scale must be positive"));
                }
            }
            Arch::Discriminator(a) => {
                if a.image.height != a.image.width {
                    return Err(Error::config("discriminator inputs must be square"));
                }
                if a.features.contains(&0) {
                    return Err(Error::config("discriminator feature widths must be positive"));
                }
                if !(0.0..1.0).contains(&a.leaky_slope) {
                    return Err(Error::config("leaky slope must lie in [0, 1)"));
                }
            }
            Arch::Classifier(a) => {
                if a.classes < 2 {
                    return Err(Error::config(format!(
                        "a classifier needs at least 2 classes, got {}",
                        a.classes
                    )));
                }
                if a.image.height < 4 || a.image.width < 4 {
                    return Err(Error::config("classifier inputs must be at least 4x4"));
                }
                if a.conv.contains(&0) || a.hidden.contains(&0) {
                    return Err(Error::config("classifier widths must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Ordered layer list. Forward passes consume layers in this order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        use Activation::*;
        let mut v = Vec::new();
        match self {
            Arch::Generator(a) => {
                let img = a.image;
                let mut in_ch = img.channels;
                if a.noise_dim > 0 {
                    v.push(LayerSpec::new(
                        "noise_fc",
                        LayerKind::Dense { inputs: a.noise_dim, outputs: img.height * img.width },
                        Identity,
                    ));
                    in_ch += 1;
                }
                let conv = |inputs, outputs, bias| LayerKind::Conv {
                    kernel: 3,
                    inputs,
                    outputs,
                    stride: 1,
                    pad: 1,
                    bias,
                };
                let bn = LayerKind::BatchNorm { channels: a.features };
                v.push(LayerSpec::new("conv_in", conv(in_ch, a.features, false), Identity));
                v.push(LayerSpec::new("bn_in", bn.clone(), Relu));
                for i in 0..a.residual_blocks {
                    let f = a.features;
                    v.push(LayerSpec::new(format!("res{i}.conv1"), conv(f, f, false), Identity));
                    v.push(LayerSpec::new(format!("res{i}.bn1"), bn.clone(), Relu));
                    v.push(LayerSpec::new(format!("res{i}.conv2"), conv(f, f, false), Identity));
                    v.push(LayerSpec::new(format!("res{i}.bn2"), bn.clone(), Identity));
                }
                v.push(LayerSpec::new(
                    "conv_out",
                    conv(a.features, img.channels, true),
                    ScaledTanh { scale: a.output_scale },
                ));
            }
            Arch::Discriminator(a) => {
                let act = LeakyRelu { slope: a.leaky_slope };
                let strided = |inputs, outputs| LayerKind::Conv {
                    kernel: 3,
                    inputs,
                    outputs,
                    stride: 2,
                    pad: 1,
                    bias: false,
                };
                v.push(LayerSpec::new("conv1", strided(a.image.channels, a.features[0]), Identity));
                v.push(LayerSpec::new("bn1", LayerKind::BatchNorm { channels: a.features[0] }, act));
                v.push(LayerSpec::new("conv2", strided(a.features[0], a.features[1]), Identity));
                v.push(LayerSpec::new("bn2", LayerKind::BatchNorm { channels: a.features[1] }, act));
                let (h, w) = a.pooled();
                debug_assert_eq!(h, w, "square inputs only");
                v.push(LayerSpec::new(
                    "conv_out",
                    LayerKind::Conv {
                        kernel: h.min(w),
                        inputs: a.features[1],
                        outputs: 1,
                        stride: 1,
                        pad: 0,
                        bias: true,
                    },
                    Identity,
                ));
            }
            Arch::Classifier(a) => {
                let conv5 = |inputs, outputs| LayerKind::Conv {
                    kernel: 5,
                    inputs,
                    outputs,
                    stride: 1,
                    pad: 2,
                    bias: true,
                };
                v.push(LayerSpec::new("conv1", conv5(a.image.channels, a.conv[0]), Relu));
                v.push(LayerSpec::new("conv2", conv5(a.conv[0], a.conv[1]), Relu));
                v.push(LayerSpec::new(
                    "fc1",
                    LayerKind::Dense { inputs: a.flat_features(), outputs: a.hidden[0] },
                    Relu,
                ));
                v.push(LayerSpec::new(
                    "fc2",
                    LayerKind::Dense { inputs: a.hidden[0], outputs: a.hidden[1] },
                    Relu,
                ));
                v.push(LayerSpec::new(
                    "logits",
                    LayerKind::Dense { inputs: a.hidden[1], outputs: a.classes },
                    Identity,
                ));
            }
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .flat_map(LayerSpec::param_shapes)
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}
