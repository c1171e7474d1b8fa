use super::{ImageBatch, PixelRange};
use crate::error::Result;
use crate::tensor::Real;

/// `v -> v / 255 - 0.5`, from raw intensities to the generator input range.
pub fn preprocess_generator_input<T: Real>(x: &ImageBatch<T>) -> Result<ImageBatch<T>> {
    x.require_range(PixelRange::RAW, "generator preprocessing")?;
    Ok(x.affine(1.0 / 255.0, -0.5, PixelRange::GENERATOR))
}

/// `v -> v - 127.5`, from raw intensities to the discriminative range.
pub fn preprocess_discriminative_input<T: Real>(x: &ImageBatch<T>) -> Result<ImageBatch<T>> {
    x.require_range(PixelRange::RAW, "discriminative preprocessing")?;
    Ok(x.affine(1.0, -127.5, PixelRange::DISCRIMINATIVE))
}

/// Inverse of [`preprocess_generator_input`].
pub fn generator_to_raw<T: Real>(x: &ImageBatch<T>) -> Result<ImageBatch<T>> {
    x.require_range(PixelRange::GENERATOR, "generator postprocessing")?;
    Ok(x.affine(255.0, 127.5, PixelRange::RAW))
}

/// Inverse of [`preprocess_discriminative_input`].
pub fn discriminative_to_raw<T: Real>(x: &ImageBatch<T>) -> Result<ImageBatch<T>> {
    x.require_range(PixelRange::DISCRIMINATIVE, "discriminative postprocessing")?;
    Ok(x.affine(1.0, 127.5, PixelRange::RAW))
}

/// Rescales generated images so they can be fed to the other generator.
pub fn discriminative_to_generator<T: Real>(x: &ImageBatch<T>) -> Result<ImageBatch<T>> {
    x.require_range(PixelRange::DISCRIMINATIVE, "generator chaining")?;
    Ok(x.affine(1.0 / 255.0, 0.0, PixelRange::GENERATOR))
}

/// Maps any declared range linearly onto `[-1, 1]` (used for embeddings and
/// image grids).
pub fn to_unit<T: Real>(x: &ImageBatch<T>) -> ImageBatch<T> {
    let r = x.range();
    let scale = 2.0 / r.width();
    x.affine(scale, -1.0 - r.lo * scale, PixelRange::UNIT)
}
