//! The adaptation settings and their split protocols.
//!
//! Expected files below the data root:
//!
//! | dataset | files |
//! |---------|-------|
//! | MNIST   | `mnist/train-images-idx3-ubyte[.gz]`, `mnist/train-labels-idx1-ubyte[.gz]` |
//! | USPS    | `usps/usps[.bz2 decompressed]`, `usps/usps.t` (LIBSVM text, 7,291 + 2,007 rows) |
//! | SVHN    | `svhn/train_32x32.mat`, `svhn/test_32x32.mat` |
//! | textures| any directory of colour photos (optional, `LoadOptions::texture_dir`) |

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::formats::{parse_libsvm, read_idx, read_mat, read_maybe_gz};
use super::mnistm::{blend_image_set, TextureBank};
use super::synthetic::{synthetic_pair, SyntheticConfig};
use super::{Dataset, DomainMeta, DomainPair, ImageSet, ImageShape};
use crate::error::{Error, Result};

pub const DIGIT_CLASSES: usize = 10;
/// MNIST training images kept for training; the rest form the validation split.
pub const MNIST_TRAIN_SPLIT: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "mnist->usps")]
    MnistUsps,
    #[serde(rename = "usps->mnist")]
    UspsMnist,
    #[serde(rename = "mnist->mnistm")]
    MnistMnistm,
    #[serde(rename = "svhn->mnist")]
    SvhnMnist,
    #[serde(rename = "mnist->svhn")]
    MnistSvhn,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl Setting {
    pub const ALL: [Setting; 6] = [
        Setting::MnistUsps,
        Setting::UspsMnist,
        Setting::MnistMnistm,
        Setting::SvhnMnist,
        Setting::MnistSvhn,
        Setting::Synthetic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::MnistUsps => "mnist->usps",
            Setting::UspsMnist => "usps->mnist",
            Setting::MnistMnistm => "mnist->mnistm",
            Setting::SvhnMnist => "svhn->mnist",
            Setting::MnistSvhn => "mnist->svhn",
            Setting::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    /// Accepts `a->b`, `a→b`, `a_b` and `a2b` spellings, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_lowercase().replace('→', "->");
        let norm = if lower.contains("->") { lower } else { lower.replacen(['_', '2'], "->", 1) };
        Setting::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = Setting::ALL.iter().map(|k| k.name()).collect();
                Error::config(format!("unknown setting {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    pub data_root: PathBuf,
    /// Labeled target samples reserved for choosing the ensemble weight.
    pub val_size: usize,
    pub seed: u64,
    pub synthetic: SyntheticConfig,
    pub texture_dir: Option<PathBuf>,
    /// Optional cap on every split, applied by seeded subsampling.
    pub max_samples: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            data_root: PathBuf::from("data"),
            val_size: 1000,
            seed: 0,
            synthetic: SyntheticConfig::default(),
            texture_dir: None,
            max_samples: None,
        }
    }
}

fn first_existing(root: &Path, candidates: &[&str]) -> Result<PathBuf> {
    candidates
        .iter()
        .map(|c| root.join(c))
        .find(|p| p.exists())
        .ok_or_else(|| Error::MissingData {
            path: root.join(candidates[0]),
            reason: format!("expected one of {candidates:?} below {}", root.display()),
        })
}

/// All 60,000 MNIST training digits, 28x28 grayscale.
pub fn load_mnist_train(root: &Path) -> Result<Dataset> {
    let ip = first_existing(root, &["mnist/train-images-idx3-ubyte", "mnist/train-images-idx3-ubyte.gz"])?;
    let lp = first_existing(root, &["mnist/train-labels-idx1-ubyte", "mnist/train-labels-idx1-ubyte.gz"])?;
    load_mnist_files(&ip, &lp)
}

pub fn load_mnist_files(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.dims.len() != 3 {
        return Err(Error::Format { path: images.into(), reason: format!("expected 3 dims, got {:?}", img.dims) });
    }
    if lab.dims.len() != 1 || lab.dims[0] != img.dims[0] {
        return Err(Error::Format {
            path: labels.into(),
            reason: format!("{:?} labels for {} images", lab.dims, img.dims[0]),
        });
    }
    let set = ImageSet::new(img.data, img.dims[0], ImageShape::new(img.dims[1], img.dims[2], 1))?;
    Dataset::labeled(set, lab.data.iter().map(|&l| l as usize).collect(), DIGIT_CLASSES)
}

/// All 9,298 USPS digits (LIBSVM train + test files), 16x16 grayscale.
pub fn load_usps(root: &Path) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for name in ["usps/usps", "usps/usps.t"] {
        let path = first_existing(root, &[name, &format!("{name}.gz")])?;
        let bytes = read_maybe_gz(&path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format { path: path.clone(), reason: "not UTF-8 text".into() })?;
        for (label, row) in parse_libsvm(&text, 256, &path)? {
            let l = label.round() as i64;
            if !(1..=10).contains(&l) {
                return Err(Error::Format { path: path.clone(), reason: format!("label {label} outside 1..=10") });
            }
            // Labels 1..=10 encode digits 0..=9.
            labels.push((l - 1) as usize);
            data.extend(row.iter().map(|v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8));
        }
    }
    let n = labels.len();
    Dataset::labeled(ImageSet::new(data, n, ImageShape::new(16, 16, 1))?, labels, DIGIT_CLASSES)
}

/// SVHN train and test splits, 32x32 colour. Label 10 encodes digit 0.
pub fn load_svhn(root: &Path) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for name in ["svhn/train_32x32.mat", "svhn/test_32x32.mat"] {
        let path = root.join(name);
        let vars = read_mat(&path)?;
        let find = |v: &str| {
            vars.iter()
                .find(|a| a.name == v)
                .ok_or_else(|| Error::Format { path: path.clone(), reason: format!("variable {v} not found") })
        };
        let x = find("X")?;
        let y = find("y")?;
        if x.dims.len() != 4 || x.dims[0] != 32 || x.dims[1] != 32 || x.dims[2] != 3 {
            return Err(Error::Format { path: path.clone(), reason: format!("X has dims {:?}", x.dims) });
        }
        let n = x.dims[3];
        if y.data.len() != n {
            return Err(Error::Format { path: path.clone(), reason: "label count mismatch".into() });
        }
        // X is column-major (row, col, channel, sample): element (r, c, ch, i)
        // sits at r + 32 c + 1024 ch + 3072 i.
        for i in 0..n {
            for r in 0..32 {
                for c in 0..32 {
                    for ch in 0..3 {
                        data.push(x.data[r + 32 * c + 1024 * ch + 3072 * i] as u8);
                    }
                }
            }
            labels.push(y.data[i] as usize % 10);
        }
    }
    let n = labels.len();
    Dataset::labeled(ImageSet::new(data, n, ImageShape::new(32, 32, 3))?, labels, DIGIT_CLASSES)
}

fn range(a: usize, b: usize) -> Vec<usize> {
    (a..b).collect()
}

/// Splits MNIST into the 50k training / 10k validation protocol.
fn mnist_source(root: &Path) -> Result<(Dataset, Dataset)> {
    let all = load_mnist_train(root)?;
    let split = MNIST_TRAIN_SPLIT.min(all.len());
    Ok((all.select(&range(0, split)), all.select(&range(split, all.len()))))
}

fn cap(d: Dataset, max: Option<usize>, rng: &mut ChaCha8Rng) -> Dataset {
    match max {
        Some(m) if m < d.len() => {
            let mut idx = sample(rng, d.len(), m).into_vec();
            idx.sort_unstable();
            d.select(&idx)
        }
        _ => d,
    }
}

/// Loads the source/target pair of `setting` following its split protocol.
pub fn load_domain_pair(setting: Setting, opts: &LoadOptions) -> Result<DomainPair> {
    if setting == Setting::Synthetic {
        return synthetic_pair(&opts.synthetic, opts.val_size, opts.seed);
    }
    let root = opts.data_root.as_path();
    let rgb32 = |d: &Dataset| d.map_images(|s| s.resize(32, 32).to_rgb());
    let (source, source_val, target) = match setting {
        Setting::MnistUsps => {
            let (tr, va) = mnist_source(root)?;
            let usps = load_usps(root)?.map_images(|s| s.resize(28, 28));
            (tr, Some(va), usps)
        }
        Setting::UspsMnist => {
            let usps = load_usps(root)?.map_images(|s| s.resize(28, 28));
            (usps, None, load_mnist_train(root)?)
        }
        Setting::MnistMnistm => {
            let (tr, va) = mnist_source(root)?;
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6d6e_6973_746d);
            let bank = match &opts.texture_dir {
                Some(dir) => TextureBank::load_dir(dir)?,
                None => TextureBank::procedural(256, 64, &mut rng),
            };
            let digits = load_mnist_train(root)?;
            let blended = digits.map_images(|s| blend_image_set(s, &bank, &mut rng).expect("28x28 patches fit"));
            (tr.map_images(ImageSet::to_rgb), Some(va.map_images(ImageSet::to_rgb)), blended)
        }
        Setting::SvhnMnist => (load_svhn(root)?, None, rgb32(&load_mnist_train(root)?)),
        Setting::MnistSvhn => {
            let (tr, va) = mnist_source(root)?;
            (rgb32(&tr), Some(rgb32(&va)), load_svhn(root)?)
        }
        Setting::Synthetic => unreachable!(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let source = cap(source, opts.max_samples, &mut rng);
    let source_val = source_val.map(|d| cap(d, opts.max_samples, &mut rng));
    let target = cap(target, opts.max_samples, &mut rng);
    if opts.val_size > target.len() {
        return Err(Error::config(format!(
            "validation size {} exceeds the {} target samples",
            opts.val_size,
            target.len()
        )));
    }
    let val_idx = sample(&mut rng, target.len(), opts.val_size).into_vec();
    let meta = DomainMeta { setting: setting.name().into(), classes: DIGIT_CLASSES, shape: source.images.shape() };
    let pair = DomainPair { target_val: target.select(&val_idx), source, source_val, target, meta };
    pair.validate()?;
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::formats::encode_idx;
    use std::io::Write;

    #[test]
    fn setting_spellings() {
        for s in ["mnist->usps", "MNIST→USPS", "mnist_usps", "mnist2usps"] {
            assert_eq!(s.parse::<Setting>().unwrap(), Setting::MnistUsps, "{s}");
        }
        assert_eq!("synthetic".parse::<Setting>().unwrap(), Setting::Synthetic);
        assert_eq!("mnist->mnistm".parse::<Setting>().unwrap(), Setting::MnistMnistm);
        assert!(matches!("cifar->stl".parse::<Setting>(), Err(Error::Config(_))));
    }

    #[test]
    fn missing_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let opts = LoadOptions { data_root: dir.path().into(), ..Default::default() };
        match load_domain_pair(Setting::MnistUsps, &opts) {
            Err(Error::MissingData { path, .. }) => {
                assert!(path.ends_with("mnist/train-images-idx3-ubyte"), "{path:?}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn write_fixture(root: &Path, mnist_n: usize, usps_rows: usize) {
        std::fs::create_dir_all(root.join("mnist")).unwrap();
        std::fs::create_dir_all(root.join("usps")).unwrap();
        let pixels: Vec<u8> = (0..mnist_n * 784).map(|i| (i % 251) as u8).collect();
        let labels: Vec<u8> = (0..mnist_n).map(|i| (i % 10) as u8).collect();
        std::fs::write(root.join("mnist/train-images-idx3-ubyte"), encode_idx(&[mnist_n, 28, 28], &pixels)).unwrap();
        std::fs::write(root.join("mnist/train-labels-idx1-ubyte"), encode_idx(&[mnist_n], &labels)).unwrap();
        for name in ["usps", "usps.t"] {
            let mut f = std::fs::File::create(root.join("usps").join(name)).unwrap();
            for r in 0..usps_rows {
                write!(f, "{}", r % 10 + 1).unwrap();
                for i in 1..=256 {
                    write!(f, " {i}:{}", (i as f64 / 128.0) - 1.0).unwrap();
                }
                writeln!(f).unwrap();
            }
        }
    }

    #[test]
    fn mnist_usps_protocol_on_fixture() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), 30, 6);
        let opts = LoadOptions { data_root: dir.path().into(), val_size: 4, ..Default::default() };
        let pair = load_domain_pair(Setting::MnistUsps, &opts).unwrap();
        assert_eq!(pair.source.len(), 30);
        assert_eq!(pair.target.len(), 12);
        assert_eq!(pair.target.images.shape(), ImageShape::new(28, 28, 1));
        assert_eq!(pair.target_val.len(), 4);
        assert_eq!(pair.target.labels.as_ref().unwrap()[..3], [0, 1, 2]);
        let again = load_domain_pair(Setting::MnistUsps, &opts).unwrap();
        assert_eq!(pair, again);

        let pair = load_domain_pair(Setting::MnistSvhn, &opts);
        assert!(matches!(pair, Err(Error::MissingData { .. })));
    }

    #[test]
    fn mnistm_setting_is_three_channel() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), 20, 1);
        let opts = LoadOptions { data_root: dir.path().into(), val_size: 5, ..Default::default() };
        let pair = load_domain_pair(Setting::MnistMnistm, &opts).unwrap();
        assert_eq!(pair.meta.shape.channels, 3);
        assert_eq!(pair.target.len(), 20);
    }
}
