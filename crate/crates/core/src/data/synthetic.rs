//! Procedural digit domains for desk-scale experiments.
//!
//! Both domains draw digits from a 5x7 bitmap font with random placement,
//! size, slant and stroke intensity. Source digits are gray on black. Target
//! digits are recoloured: by default a fixed dark-on-light colour scheme with
//! per-image jitter, or, in texture mode, blended with colour textures the
//! same way as the texture benchmark.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mnistm::{blend_image_set, TextureBank};
use super::{Dataset, DomainMeta, DomainPair, ImageSet, ImageShape};
use crate::error::{Error, Result};

/// Rows of each glyph, most significant of the low five bits leftmost.
const FONT: [[u8; 7]; 10] = [
    [0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e],
    [0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e],
    [0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f],
    [0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e],
    [0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02],
    [0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e],
    [0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e],
    [0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e],
    [0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c],
];

pub const MAX_CLASSES: usize = FONT.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Side length of the square images.
    pub size: usize,
    pub source_samples: usize,
    pub target_samples: usize,
    pub classes: usize,
    pub style: TargetStyle,
    /// Number of procedural textures in the pool (texture style only).
    pub textures: usize,
}

/// How target images differ from source images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetStyle {
    /// Dark coloured strokes on a light coloured background.
    #[default]
    Color,
    /// Absolute difference with a random crop of a colour texture.
    Texture,
}

/// Target background and stroke colours of the colour style.
pub const TARGET_BACKGROUND: [f64; 3] = [225.0, 190.0, 70.0];
pub const TARGET_STROKE: [f64; 3] = [40.0, 60.0, 170.0];

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { size: 16, source_samples: 2000, target_samples: 2000, classes: 10, style: TargetStyle::Color, textures: 64 }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_CLASSES).contains(&self.classes) {
            return Err(Error::config(format!(
                "synthetic classes must lie in 2..={MAX_CLASSES}, got {}",
                self.classes
            )));
        }
        if self.size < 8 {
            return Err(Error::config("synthetic images must be at least 8 pixels wide"));
        }
        if self.source_samples == 0 || self.target_samples == 0 {
            return Err(Error::config("synthetic domains need at least one sample"));
        }
        if self.textures == 0 {
            return Err(Error::config("synthetic target needs at least one texture"));
        }
        Ok(())
    }
}

fn glyph_on(class: usize, gx: f64, gy: f64) -> bool {
    if !(0.0..5.0).contains(&gx) || !(0.0..7.0).contains(&gy) {
        return false;
    }
    let row = FONT[class][gy as usize];
    row >> (4 - gx as usize) & 1 == 1
}

/// Renders one jittered glyph as a `size x size` gray image.
pub fn render_glyph(class: usize, size: usize, rng: &mut impl Rng) -> Vec<u8> {
    let s = size as f64;
    let height = s * rng.random_range(0.6..0.85);
    let width = height * rng.random_range(0.55..0.8);
    let slant = rng.random_range(-0.25..0.25);
    let top = rng.random_range(0.0..(s - height).max(0.0) + 1e-9);
    let left = rng.random_range(0.0..(s - width).max(0.0) + 1e-9);
    let ink = rng.random_range(170.0..255.0);
    // 3x3 supersampling gives smooth stroke edges.
    let sub = 3;
    let mut out = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0;
            for sy in 0..sub {
                for sx in 0..sub {
                    let py = y as f64 + (sy as f64 + 0.5) / sub as f64;
                    let px = x as f64 + (sx as f64 + 0.5) / sub as f64;
                    let v = (py - top) / height;
                    let u = (px - left) / width + slant * (v - 0.5);
                    if glyph_on(class, u * 5.0, v * 7.0) {
                        hits += 1;
                    }
                }
            }
            out[y * size + x] = (ink * hits as f64 / (sub * sub) as f64).round() as u8;
        }
    }
    out
}

/// `n` glyphs with balanced, shuffled labels, replicated to three channels.
pub fn glyph_set(n: usize, size: usize, classes: usize, rng: &mut impl Rng) -> Result<(ImageSet, Vec<usize>)> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), rng);
    let mut data = Vec::with_capacity(n * size * size);
    for &l in &labels {
        data.extend(render_glyph(l, size, rng));
    }
    Ok((ImageSet::new(data, n, ImageShape::new(size, size, 1))?, labels))
}

/// Maps gray glyphs onto the target colour scheme. Each image gets its own
/// brightness offset and every pixel a little noise.
pub fn recolor(gray: &ImageSet, rng: &mut impl Rng) -> Result<ImageSet> {
    let noise = Normal::new(0.0, 6.0).expect("valid normal");
    let mut data = Vec::with_capacity(gray.bytes().len() * 3);
    for i in 0..gray.len() {
        let shift = rng.random_range(-20.0..20.0);
        for &g in gray.image(i) {
            let a = f64::from(g) / 255.0;
            for c in 0..3 {
                let v = TARGET_BACKGROUND[c] + a * (TARGET_STROKE[c] - TARGET_BACKGROUND[c]) + shift + noise.sample(rng);
                data.push(v.clamp(0.0, 255.0).round() as u8);
            }
        }
    }
    let s = gray.shape();
    ImageSet::new(data, gray.len(), ImageShape::new(s.height, s.width, 3))
}

/// Builds the seeded source/target pair. `val_size` target samples are
/// drawn (with labels) for choosing the ensemble weight.
pub fn synthetic_pair(cfg: &SyntheticConfig, val_size: usize, seed: u64) -> Result<DomainPair> {
    cfg.validate()?;
    if val_size > cfg.target_samples {
        return Err(Error::config(format!(
            "validation size {val_size} exceeds the {} target samples",
            cfg.target_samples
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (src, src_labels) = glyph_set(cfg.source_samples, cfg.size, cfg.classes, &mut rng)?;
    let (tgt_gray, tgt_labels) = glyph_set(cfg.target_samples, cfg.size, cfg.classes, &mut rng)?;
    let tgt = match cfg.style {
        TargetStyle::Color => recolor(&tgt_gray, &mut rng)?,
        TargetStyle::Texture => {
            let bank = TextureBank::procedural(cfg.textures, cfg.size * 2, &mut rng);
            blend_image_set(&tgt_gray, &bank, &mut rng)?
        }
    };
    let target = Dataset::labeled(tgt, tgt_labels, cfg.classes)?;
    let val_idx = sample(&mut rng, cfg.target_samples, val_size).into_vec();
    let pair = DomainPair {
        source: Dataset::labeled(src.to_rgb(), src_labels, cfg.classes)?,
        source_val: None,
        target_val: target.select(&val_idx),
        target,
        meta: DomainMeta {
            setting: "synthetic".into(),
            classes: cfg.classes,
            shape: ImageShape::new(cfg.size, cfg.size, 3),
        },
    };
    pair.validate()?;
    Ok(pair)
}
