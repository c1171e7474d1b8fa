use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Closed interval the pixel values of an [`ImageBatch`] are declared to lie in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRange {
    pub lo: f64,
    pub hi: f64,
}

impl PixelRange {
    /// Raw 8-bit intensities.
    pub const RAW: PixelRange = PixelRange { lo: 0.0, hi: 255.0 };
    /// Generator inputs.
    pub const GENERATOR: PixelRange = PixelRange { lo: -0.5, hi: 0.5 };
    /// Generator outputs and classifier/discriminator inputs.
    pub const DISCRIMINATIVE: PixelRange = PixelRange { lo: -127.5, hi: 127.5 };
    /// Visualization inputs.
    pub const UNIT: PixelRange = PixelRange { lo: -1.0, hi: 1.0 };

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Height, width and channel count of one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        ImageShape { height, width, channels }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config(format!("image shape {self:?} has an empty side")));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(Error::config(format!(
                "images must have 1 or 3 channels, got {}",
                self.channels
            )));
        }
        Ok(())
    }
}

/// Rank-4 `(batch, height, width, channels)` images with a declared range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch<T = f32> {
    data: Vec<T>,
    batch: usize,
    shape: ImageShape,
    range: PixelRange,
}

impl<T: Real> ImageBatch<T> {
    /// Validates that every value lies inside `range`.
    pub fn new(data: Vec<T>, batch: usize, shape: ImageShape, range: PixelRange) -> Result<Self> {
        if data.len() != batch * shape.pixels() {
            return Err(Error::contract(format!(
                "image data has {} values, expected {batch} x {:?}",
                data.len(),
                shape
            )));
        }
        if let Some(v) = data.iter().find(|v| !range.contains(v.to_f64().unwrap_or(f64::NAN))) {
            return Err(Error::contract(format!(
                "pixel value {v} outside declared range [{}, {}]",
                range.lo, range.hi
            )));
        }
        Ok(ImageBatch { data, batch, shape, range })
    }

    /// Builds a batch from a network output tensor, clamping round-off that
    /// escapes the declared range.
    pub fn from_tensor(t: &Tensor<T>, range: PixelRange) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 {
            return Err(Error::contract(format!("expected an NHWC tensor, got {s:?}")));
        }
        let (lo, hi) = (T::from_f64_lossy(range.lo), T::from_f64_lossy(range.hi));
        let data = t.data().iter().map(|&v| v.max(lo).min(hi)).collect();
        Self::new(data, s[0], ImageShape::new(s[1], s[2], s[3]), range)
    }

    pub fn len(&self) -> usize {
        self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }

    pub fn image_shape(&self) -> ImageShape {
        self.shape
    }

    pub fn range(&self) -> PixelRange {
        self.range
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn image(&self, i: usize) -> &[T] {
        let n = self.shape.pixels();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.shape.height, self.shape.width, self.shape.channels]
    }

    /// Constant tensor view for feeding networks.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(self.data.clone(), &self.dims())
    }

    pub fn require_range(&self, expected: PixelRange, what: &str) -> Result<()> {
        if self.range != expected {
            return Err(Error::contract(format!(
                "{what} expects images in [{}, {}], got [{}, {}]",
                expected.lo, expected.hi, self.range.lo, self.range.hi
            )));
        }
        Ok(())
    }

    /// Applies `v -> v * scale + shift` and re-declares the range.
    pub(crate) fn affine(&self, scale: f64, shift: f64, range: PixelRange) -> Self {
        let (s, b) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
        let (lo, hi) = (T::from_f64_lossy(range.lo), T::from_f64_lossy(range.hi));
        let data = self.data.iter().map(|&v| (v * s + b).max(lo).min(hi)).collect();
        ImageBatch { data, batch: self.batch, shape: self.shape, range }
    }

    /// Copies images `idx` into a new batch.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.shape.pixels());
        for &i in idx {
            data.extend_from_slice(self.image(i));
        }
        ImageBatch { data, batch: idx.len(), shape: self.shape, range: self.range }
    }

    pub fn cast<U: Real>(&self) -> ImageBatch<U> {
        ImageBatch {
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64().unwrap())).collect(),
            batch: self.batch,
            shape: self.shape,
            range: self.range,
        }
    }
}

/// Integer class labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelBatch {
    labels: Vec<usize>,
    classes: usize,
}

impl LabelBatch {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::contract(format!("label {bad} is not a class index below {classes}")));
        }
        Ok(LabelBatch { labels, classes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Row-stochastic `(batch, classes)` matrix of class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch {
    probs: Vec<f64>,
    classes: usize,
}

/// Row sums may deviate from one by at most this much.
pub const PROB_TOLERANCE: f64 = 1e-6;

impl ProbBatch {
    pub fn new(probs: Vec<f64>, classes: usize) -> Result<Self> {
        if classes == 0 || !probs.len().is_multiple_of(classes) {
            return Err(Error::contract(format!(
                "{} probabilities cannot form rows of {classes}",
                probs.len()
            )));
        }
        for (i, row) in probs.chunks_exact(classes).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(0.0..=1.0 + PROB_TOLERANCE).contains(&p))
                || (sum - 1.0).abs() > PROB_TOLERANCE
            {
                return Err(Error::contract(format!("row {i} is not a probability vector: {row:?}")));
            }
        }
        Ok(ProbBatch { probs, classes })
    }

    pub(crate) fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 2 {
            return Err(Error::contract(format!("expected (batch, classes), got {s:?}")));
        }
        Self::new(t.data().iter().map(|v| v.to_f64().unwrap()).collect(), s[1])
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.classes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Per-row argmax; ties resolve to the lowest class index.
    pub fn argmax(&self) -> LabelBatch {
        let labels = self.rows().map(argmax_lowest).collect();
        LabelBatch { labels, classes: self.classes }
    }
}

/// Index of the largest value, preferring the lowest index on ties.
pub fn argmax_lowest<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Standard-normal noise vectors fed to the generators.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch<T = f32> {
    data: Vec<T>,
    batch: usize,
    dim: usize,
}

impl<T: Real> NoiseBatch<T> {
    pub fn new(data: Vec<T>, batch: usize, dim: usize) -> Result<Self> {
        if data.len() != batch * dim {
            return Err(Error::contract(format!(
                "noise has {} values, expected ({batch}, {dim})",
                data.len()
            )));
        }
        Ok(NoiseBatch { data, batch, dim })
    }

    pub fn sample(batch: usize, dim: usize, rng: &mut impl rand::Rng) -> Self {
        let normal = rand_distr::StandardNormal;
        let data = (0..batch * dim)
            .map(|_| T::from_f64_lossy(rng.sample::<f64, _>(normal)))
            .collect();
        NoiseBatch { data, batch, dim }
    }

    pub fn len(&self) -> usize {
        self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(self.data.clone(), &[self.batch, self.dim])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_batch_rejects_out_of_range_values() {
        let shape = ImageShape::new(1, 2, 1);
        assert!(ImageBatch::new(vec![0.0f32, 256.0], 1, shape, PixelRange::RAW).is_err());
        assert!(ImageBatch::new(vec![0.0f32, 255.0], 1, shape, PixelRange::RAW).is_ok());
        assert!(ImageBatch::new(vec![0.0f32], 1, shape, PixelRange::RAW).is_err());
    }

    #[test]
    fn label_batch_rejects_invalid_class() {
        assert!(LabelBatch::new(vec![0, 3], 3).is_err());
        assert!(LabelBatch::new(vec![0, 2], 3).is_ok());
    }

    #[test]
    fn prob_batch_validates_rows() {
        assert!(ProbBatch::new(vec![0.5, 0.6], 2).is_err());
        assert!(ProbBatch::new(vec![0.25, 0.75, 1.0, 0.0], 2).is_ok());
        assert!(ProbBatch::new(vec![0.5, 0.5, 0.5], 2).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax_lowest(&[0.5, 0.5]), 0);
        assert_eq!(argmax_lowest(&[0.1, 0.9]), 1);
        assert_eq!(argmax_lowest(&[0.2, 0.4, 0.4]), 1);
    }
}
