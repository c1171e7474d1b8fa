//! Texture-blended digits: the digit background is replaced by a colour
//! patch through the absolute-difference blend `|digit - patch|`.

use std::path::Path;

use rand::Rng;

use super::{ImageBatch, ImageSet, ImageShape, PixelRange};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Blends each grayscale digit with a randomly chosen patch.
///
/// Digits are `(N, H, W, 1)` and patches `(M, Hp, Wp, 3)` with `Hp >= H`,
/// `Wp >= W`, both in the raw range. When a patch is larger than the digit a
/// random crop of digit size is taken. The output is `(N, H, W, 3)` raw.
pub fn make_mnist_m<T: Real>(
    digits: &ImageBatch<T>,
    patches: &ImageBatch<T>,
    rng: &mut impl Rng,
) -> Result<ImageBatch<T>> {
    digits.require_range(PixelRange::RAW, "texture blending (digits)")?;
    patches.require_range(PixelRange::RAW, "texture blending (patches)")?;
    let d = digits.image_shape();
    let p = patches.image_shape();
    if d.channels != 1 {
        return Err(Error::contract("digits must be grayscale"));
    }
    if p.channels != 3 {
        return Err(Error::contract("texture patches must have 3 channels"));
    }
    if p.height < d.height || p.width < d.width {
        return Err(Error::contract(format!(
            "patch {}x{} is smaller than digit {}x{}",
            p.height, p.width, d.height, d.width
        )));
    }
    if patches.is_empty() {
        return Err(Error::Empty("no texture patches".into()));
    }
    let mut out = Vec::with_capacity(digits.len() * d.height * d.width * 3);
    for i in 0..digits.len() {
        let digit = digits.image(i);
        let patch = patches.image(rng.random_range(0..patches.len()));
        let oy = rng.random_range(0..=p.height - d.height);
        let ox = rng.random_range(0..=p.width - d.width);
        for y in 0..d.height {
            for x in 0..d.width {
                let v = digit[y * d.width + x];
                let base = ((oy + y) * p.width + ox + x) * 3;
                for c in 0..3 {
                    out.push((v - patch[base + c]).abs());
                }
            }
        }
    }
    ImageBatch::new(out, digits.len(), ImageShape::new(d.height, d.width, 3), PixelRange::RAW)
}

/// A pool of colour images from which patches are cut.
#[derive(Debug, Clone)]
pub struct TextureBank {
    textures: Vec<ImageSet>,
}

impl TextureBank {
    /// Loads every decodable image in `dir` (PNG, JPEG, BMP), sorted by name.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::MissingData {
            path: dir.to_path_buf(),
            reason: format!("cannot read texture directory: {e}"),
        })?;
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        let mut textures = Vec::new();
        for path in paths {
            let Ok(img) = image::open(&path) else {
                log::debug!("skipping non-image file {}", path.display());
                continue;
            };
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            textures.push(ImageSet::new(
                rgb.into_raw(),
                1,
                ImageShape::new(h as usize, w as usize, 3),
            )?);
        }
        if textures.is_empty() {
            return Err(Error::MissingData {
                path: dir.to_path_buf(),
                reason: "no readable images in texture directory".into(),
            });
        }
        Ok(TextureBank { textures })
    }

    /// Seeded colourful textures built from a few random plane waves per
    /// channel. Used when no texture directory is supplied.
    pub fn procedural(count: usize, size: usize, rng: &mut impl Rng) -> Self {
        let textures = (0..count)
            .map(|_| {
                let waves: Vec<[f64; 5]> = (0..9)
                    .map(|_| {
                        let angle = rng.random_range(0.0..std::f64::consts::TAU);
                        let freq = rng.random_range(0.05..0.6);
                        [
                            angle.cos() * freq,
                            angle.sin() * freq,
                            rng.random_range(0.0..std::f64::consts::TAU),
                            rng.random_range(20.0..70.0),
                            0.0,
                        ]
                    })
                    .collect();
                let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..215.0));
                let mut data = Vec::with_capacity(size * size * 3);
                for y in 0..size {
                    for x in 0..size {
                        for c in 0..3 {
                            let v = waves[c * 3..c * 3 + 3].iter().fold(base[c], |acc, w| {
                                acc + w[3] * (w[0] * x as f64 + w[1] * y as f64 + w[2]).sin()
                            });
                            data.push(v.clamp(0.0, 255.0).round() as u8);
                        }
                    }
                }
                ImageSet::new(data, 1, ImageShape::new(size, size, 3)).expect("valid shape")
            })
            .collect();
        TextureBank { textures }
    }

    pub fn len(&self) -> usize {
        self.textures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.textures.is_empty()
    }

    /// Cuts `count` random `height x width` patches.
    pub fn patches(&self, count: usize, height: usize, width: usize, rng: &mut impl Rng) -> Result<ImageSet> {
        let mut data = Vec::with_capacity(count * height * width * 3);
        for _ in 0..count {
            let t = &self.textures[rng.random_range(0..self.textures.len())];
            let s = t.shape();
            if s.height < height || s.width < width {
                return Err(Error::contract(format!(
                    "texture {}x{} is smaller than requested patch {height}x{width}",
                    s.height, s.width
                )));
            }
            let oy = rng.random_range(0..=s.height - height);
            let ox = rng.random_range(0..=s.width - width);
            let img = t.image(0);
            for y in 0..height {
                let row = ((oy + y) * s.width + ox) * 3;
                data.extend_from_slice(&img[row..row + width * 3]);
            }
        }
        ImageSet::new(data, count, ImageShape::new(height, width, 3))
    }
}

/// Blends a whole 8-bit digit set, one fresh patch per digit.
pub fn blend_image_set(digits: &ImageSet, bank: &TextureBank, rng: &mut impl Rng) -> Result<ImageSet> {
    let s = digits.shape();
    let patches = bank.patches(digits.len(), s.height, s.width, rng)?;
    let blended = make_mnist_m(&digits.all(), &patches.all(), rng)?;
    let bytes = blended.data().iter().map(|&v| v as u8).collect();
    ImageSet::new(bytes, digits.len(), blended.image_shape())
}
