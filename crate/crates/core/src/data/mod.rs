//! Datasets, preprocessing and batch streams.
//!
//! Raw images are stored as 8-bit intensities in [`ImageSet`]. They become
//! floating-point [`ImageBatch`]es in the raw range and are then mapped into
//! the generator or discriminative range by the `preprocess_*` functions.

mod batch;
pub mod cache;
pub mod formats;
pub mod mnistm;
mod preprocess;
pub mod settings;
mod stream;
pub mod synthetic;

pub use batch::{
    argmax_lowest, ImageBatch, ImageShape, LabelBatch, NoiseBatch, PixelRange, ProbBatch,
    PROB_TOLERANCE,
};
pub use preprocess::{
    discriminative_to_generator, discriminative_to_raw, generator_to_raw,
    preprocess_discriminative_input, preprocess_generator_input, to_unit,
};
pub use settings::{load_domain_pair, LoadOptions, Setting};
pub use stream::{batch_stream, batches_per_epoch, cyclic_batch, epoch_permutation, BatchStream, StreamItem};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of 8-bit images sharing one geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    data: Vec<u8>,
    len: usize,
    shape: ImageShape,
}

impl ImageSet {
    pub fn new(data: Vec<u8>, len: usize, shape: ImageShape) -> Result<Self> {
        shape.validate()?;
        if data.len() != len * shape.pixels() {
            return Err(Error::contract(format!(
                "image set has {} bytes, expected {len} x {shape:?}",
                data.len()
            )));
        }
        Ok(ImageSet { data, len, shape })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.shape.pixels();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn select(&self, idx: &[usize]) -> ImageSet {
        let mut data = Vec::with_capacity(idx.len() * self.shape.pixels());
        for &i in idx {
            data.extend_from_slice(self.image(i));
        }
        ImageSet { data, len: idx.len(), shape: self.shape }
    }

    /// Raw-range floating point batch of the selected images.
    pub fn batch(&self, idx: &[usize]) -> ImageBatch {
        let mut data = Vec::with_capacity(idx.len() * self.shape.pixels());
        for &i in idx {
            data.extend(self.image(i).iter().map(|&v| f32::from(v)));
        }
        ImageBatch::new(data, idx.len(), self.shape, PixelRange::RAW)
            .expect("8-bit values lie in the raw range")
    }

    pub fn all(&self) -> ImageBatch {
        self.batch(&(0..self.len).collect::<Vec<_>>())
    }

    /// Converts to three channels by replicating a grayscale plane.
    pub fn to_rgb(&self) -> ImageSet {
        if self.shape.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageSet { data, len: self.len, shape: ImageShape { channels: 3, ..self.shape } }
    }

    /// Bilinear resize of every image.
    pub fn resize(&self, height: usize, width: usize) -> ImageSet {
        use image::imageops::{resize, FilterType};
        if (height, width) == (self.shape.height, self.shape.width) {
            return self.clone();
        }
        let (h, w, c) = (self.shape.height, self.shape.width, self.shape.channels);
        let mut data = Vec::with_capacity(self.len * height * width * c);
        for i in 0..self.len {
            let img = self.image(i);
            // Resize each channel as a luma image so 1- and 3-channel sets share
            // one code path.
            let mut planes = Vec::with_capacity(c);
            for ch in 0..c {
                let plane: Vec<u8> = (0..h * w).map(|p| img[p * c + ch]).collect();
                let buf = image::GrayImage::from_raw(w as u32, h as u32, plane)
                    .expect("plane size matches");
                planes.push(resize(&buf, width as u32, height as u32, FilterType::Triangle));
            }
            for p in 0..height * width {
                for plane in &planes {
                    data.push(plane.as_raw()[p]);
                }
            }
        }
        ImageSet { data, len: self.len, shape: ImageShape::new(height, width, c) }
    }

    pub fn concat(&self, other: &ImageSet) -> Result<ImageSet> {
        if self.shape != other.shape {
            return Err(Error::contract("cannot concatenate image sets of different shapes"));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(ImageSet { data, len: self.len + other.len, shape: self.shape })
    }
}

/// Images with optional class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub images: ImageSet,
    pub labels: Option<Vec<usize>>,
    pub classes: usize,
}

impl Dataset {
    pub fn labeled(images: ImageSet, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.len() != images.len() {
            return Err(Error::contract(format!(
                "{} labels for {} images",
                labels.len(),
                images.len()
            )));
        }
        LabelBatch::new(labels.clone(), classes)?;
        Ok(Dataset { images, labels: Some(labels), classes })
    }

    pub fn unlabeled(images: ImageSet, classes: usize) -> Self {
        Dataset { images, labels: None, classes }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            classes: self.classes,
        }
    }

    pub fn label_batch(&self, idx: &[usize]) -> Option<LabelBatch> {
        self.labels.as_ref().map(|l| {
            LabelBatch::new(idx.iter().map(|&i| l[i]).collect(), self.classes)
                .expect("labels validated at construction")
        })
    }

    pub fn all_labels(&self) -> Result<LabelBatch> {
        let labels = self
            .labels
            .clone()
            .ok_or_else(|| Error::contract("dataset carries no labels"))?;
        LabelBatch::new(labels, self.classes)
    }

    /// The same images without labels.
    pub fn without_labels(&self) -> Dataset {
        Dataset { images: self.images.clone(), labels: None, classes: self.classes }
    }

    pub fn map_images(&self, f: impl FnOnce(&ImageSet) -> ImageSet) -> Dataset {
        Dataset { images: f(&self.images), labels: self.labels.clone(), classes: self.classes }
    }
}

/// Class count and geometry shared by both domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMeta {
    pub setting: String,
    pub classes: usize,
    pub shape: ImageShape,
}

/// Source and target data for one adaptation task.
///
/// `target` keeps its labels so accuracy can be measured, but training only
/// ever reads its images. `target_val` is the labeled subset used to choose
/// the ensemble weight.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    pub source: Dataset,
    pub source_val: Option<Dataset>,
    pub target: Dataset,
    pub target_val: Dataset,
    pub meta: DomainMeta,
}

impl DomainPair {
    pub fn validate(&self) -> Result<()> {
        let k = self.meta.classes;
        for (what, d) in [("source", &self.source), ("target", &self.target), ("target_val", &self.target_val)]
        {
            if d.classes != k {
                return Err(Error::contract(format!("{what} has {} classes, expected {k}", d.classes)));
            }
            if d.images.shape() != self.meta.shape {
                return Err(Error::contract(format!(
                    "{what} images are {:?}, expected {:?}",
                    d.images.shape(),
                    self.meta.shape
                )));
            }
        }
        if self.source.labels.is_none() {
            return Err(Error::contract("source domain must be labeled"));
        }
        if self.target_val.labels.is_none() {
            return Err(Error::contract("target validation subset must be labeled"));
        }
        Ok(())
    }
}
