//! PNG output: paired image grids and embedding scatter plots.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use image::{Rgb, RgbImage};
use symgan_core::data::ImageBatch;

const GAP: u32 = 2;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);

fn pixel(batch: &ImageBatch, i: usize, y: usize, x: usize) -> Rgb<u8> {
    let s = batch.image_shape();
    let img = batch.image(i);
    let at = |c: usize| img[(y * s.width + x) * s.channels + c].clamp(0.0, 255.0).round() as u8;
    if s.channels == 1 {
        let v = at(0);
        Rgb([v, v, v])
    } else {
        Rgb([at(0), at(1), at(2)])
    }
}

/// Two rows of raw-range images: `top[i]` above `bottom[i]`, each pixel
/// drawn as a `scale x scale` block.
pub fn paired_grid(top: &ImageBatch, bottom: &ImageBatch, scale: u32, path: &Path) -> Result<()> {
    ensure!(top.len() == bottom.len() && !top.is_empty(), "grid rows must be non-empty and of equal length");
    let s = top.image_shape();
    ensure!(bottom.image_shape() == s, "grid rows differ in image shape");
    let (w, h) = (s.width as u32 * scale, s.height as u32 * scale);
    let n = top.len() as u32;
    let mut canvas = RgbImage::from_pixel(n * (w + GAP) + GAP, 2 * (h + GAP) + GAP, BACKGROUND);
    for (row, batch) in [top, bottom].into_iter().enumerate() {
        for i in 0..batch.len() {
            let (x0, y0) = (GAP + i as u32 * (w + GAP), GAP + row as u32 * (h + GAP));
            for y in 0..h {
                for x in 0..w {
                    let p = pixel(batch, i, (y / scale) as usize, (x / scale) as usize);
                    canvas.put_pixel(x0 + x, y0 + y, p);
                }
            }
        }
    }
    canvas.save(path).with_context(|| format!("cannot write {}", path.display()))
}

/// Colours cycled through for the point groups of a scatter plot.
pub const PALETTE: [[u8; 3]; 4] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189]];

/// Square scatter plot; `groups[i]` indexes [`PALETTE`]. A small swatch per
/// group is drawn in the top-left corner in group order.
pub fn scatter(points: &[[f64; 2]], groups: &[usize], size: u32, path: &Path) -> Result<()> {
    ensure!(points.len() == groups.len(), "one group per point");
    ensure!(size >= 64, "scatter plots need at least 64x64 pixels");
    let mut canvas = RgbImage::from_pixel(size, size, BACKGROUND);
    if !points.is_empty() {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let margin = 12.0;
        let span = (size as f64 - 2.0 * margin).max(1.0);
        let to_px = |v: f64, k: usize| {
            let range = (hi[k] - lo[k]).max(1e-12);
            (margin + (v - lo[k]) / range * span).round() as i64
        };
        for (p, &g) in points.iter().zip(groups) {
            let colour = Rgb(PALETTE[g % PALETTE.len()]);
            let (cx, cy) = (to_px(p[0], 0), size as i64 - 1 - to_px(p[1], 1));
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (x, y) = (cx + dx, cy + dy);
                    if (0..size as i64).contains(&x) && (0..size as i64).contains(&y) {
                        canvas.put_pixel(x as u32, y as u32, colour);
                    }
                }
            }
        }
    }
    let n_groups = groups.iter().max().map_or(0, |m| m + 1);
    for g in 0..n_groups {
        for y in 2..8 {
            for x in 0..6 {
                canvas.put_pixel(2 + g as u32 * 8 + x, y, Rgb(PALETTE[g % PALETTE.len()]));
            }
        }
    }
    canvas.save(path).with_context(|| format!("cannot write {}", path.display()))
}
