use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Normalized Gaussian weights with standard deviation `gaussian_sigma`.
    Gaussian,
    /// Equal weights.
    Uniform,
}

/// Local-window settings of the structural similarity index.
///
/// The default is an 11x11 Gaussian window with σ = 1.5 and the usual
/// constants `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`, `L = 255`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    pub window: WindowKind,
    pub window_size: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Width `L` of the pixel value range.
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig { window: WindowKind::Gaussian, window_size: 11, gaussian_sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 255.0 }
    }
}

impl SsimConfig {
    /// 8x8 uniform window with the standard constants.
    pub fn uniform8() -> Self {
        SsimConfig { window: WindowKind::Uniform, window_size: 8, ..Self::default() }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(Error::config("SSIM window size must be positive"));
        }
        if self.window == WindowKind::Gaussian && self.gaussian_sigma <= 0.0 {
            return Err(Error::config("SSIM Gaussian sigma must be positive"));
        }
        if !(self.c1() > 0.0 && self.c2() > 0.0) {
            return Err(Error::config("SSIM stabilizers C1 and C2 must be positive"));
        }
        Ok(())
    }

    /// One-dimensional window weights; the 2-D window is their outer product.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.window_size;
        let w: Vec<f64> = match self.window {
            WindowKind::Uniform => vec![1.0; n],
            WindowKind::Gaussian => {
                let c = (n as f64 - 1.0) / 2.0;
                (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.gaussian_sigma.powi(2))).exp()).collect()
            }
        };
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }

    pub fn describe(&self) -> String {
        let kind = match self.window {
            WindowKind::Gaussian => format!("gaussian sigma={}", self.gaussian_sigma),
            WindowKind::Uniform => "uniform".to_string(),
        };
        format!(
            "{n}x{n} {kind} window, K1={}, K2={}, L={}",
            self.k1,
            self.k2,
            self.dynamic_range,
            n = self.window_size
        )
    }
}

/// Separable weighted filter over the valid region of one plane.
fn filter(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean windowed SSIM between two images stored as `(H, W, C)` values.
/// Multi-channel images average the per-channel indices.
pub fn ssim(a: &[f64], b: &[f64], shape: ImageShape, cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    if a.len() != shape.pixels() || b.len() != shape.pixels() {
        return Err(Error::contract(format!(
            "SSIM inputs have {} and {} values, shape {shape:?} needs {}",
            a.len(),
            b.len(),
            shape.pixels()
        )));
    }
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    if cfg.window_size > h || cfg.window_size > w {
        return Err(Error::config(format!("SSIM window {} does not fit a {h}x{w} image", cfg.window_size)));
    }
    let k = cfg.weights();
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = (0..h * w).map(|p| a[p * c + ch]).collect();
        let pb: Vec<f64> = (0..h * w).map(|p| b[p * c + ch]).collect();
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_a = filter(&pa, h, w, &k);
        let mu_b = filter(&pb, h, w, &k);
        let aa = filter(&prod(&pa, &pa), h, w, &k);
        let bb = filter(&prod(&pb, &pb), h, w, &k);
        let ab = filter(&prod(&pa, &pb), h, w, &k);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

/// Mean SSIM of random same-class pairs, averaged over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntraClassSsim {
    pub mean: f64,
    pub per_class: BTreeMap<usize, f64>,
    /// Classes with fewer than two images, excluded from the mean.
    pub skipped: Vec<usize>,
}

/// For every class draws `pairs_per_class` pairs of distinct images
/// (independently, with replacement across pairs) and averages their SSIM.
/// `images` holds `labels.len()` images of `shape`.
pub fn mean_intra_class_ssim(
    images: &[f64],
    shape: ImageShape,
    labels: &[usize],
    pairs_per_class: usize,
    seed: u64,
    cfg: &SsimConfig,
) -> Result<IntraClassSsim> {
    let n = shape.pixels();
    if images.len() != labels.len() * n {
        return Err(Error::contract(format!("{} values for {} images of {shape:?}", images.len(), labels.len())));
    }
    if pairs_per_class == 0 {
        return Err(Error::config("pairs_per_class must be positive"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class = BTreeMap::new();
    let mut skipped = Vec::new();
    for (class, members) in by_class {
        if members.len() < 2 {
            log::warn!("class {class} has {} image(s); skipped in the SSIM average", members.len());
            skipped.push(class);
            continue;
        }
        let mut sum = 0.0;
        for _ in 0..pairs_per_class {
            let i = rng.random_range(0..members.len());
            let mut j = rng.random_range(0..members.len() - 1);
            if j >= i {
                j += 1;
            }
            let (a, b) = (members[i], members[j]);
            sum += ssim(&images[a * n..(a + 1) * n], &images[b * n..(b + 1) * n], shape, cfg)?;
        }
        per_class.insert(class, sum / pairs_per_class as f64);
    }
    if per_class.is_empty() {
        return Err(Error::Empty("no class has two images to compare".into()));
    }
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(IntraClassSsim { mean, per_class, skipped })
}

/// One row of the diversity table: source, target mapped to source, source
/// mapped to target, target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimRow {
    pub setting: String,
    pub source: f64,
    pub target_to_source: f64,
    pub source_to_target: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SsimTable {
    pub config: String,
    pub rows: Vec<SsimRow>,
}

impl SsimTable {
    pub const COLUMNS: [&'static str; 4] = ["S", "T->S", "S->T", "T"];

    pub fn to_text(&self) -> String {
        let mut out = format!("# dataset mean SSIM ({})\n", self.config);
        out.push_str(&format!("{:<16}", "setting"));
        for c in Self::COLUMNS {
            out.push_str(&format!("{c:>8}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16}{:>8.3}{:>8.3}{:>8.3}{:>8.3}\n",
                r.setting, r.source, r.target_to_source, r.source_to_target, r.target
            ));
        }
        out
    }
}
