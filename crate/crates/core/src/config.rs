//! Experiment configuration: a TOML tree with documented defaults.
//!
//! Values are resolved in three layers. Built-in defaults come first, then
//! the config file, then `key.path=value` overrides. [`ExperimentConfig::load`]
//! implements the precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::synthetic::SyntheticConfig;
use crate::data::{ImageShape, LoadOptions, Setting};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::SsimConfig;
use crate::models::{Arch, ClassifierArch, DiscriminatorArch, GeneratorArch, INIT_STD};
use crate::optim::AdamConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Half-width of the generator output range (the discriminative range).
pub const GENERATOR_OUTPUT_SCALE: f64 = 127.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub noise_dim: usize,
    pub generator_features: usize,
    pub residual_blocks: usize,
    pub discriminator_features: [usize; 2],
    pub leaky_slope: f64,
    pub classifier_conv: [usize; 2],
    pub classifier_hidden: [usize; 2],
    pub init_std: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            noise_dim: 5,
            generator_features: 64,
            residual_blocks: 4,
            discriminator_features: [64, 128],
            leaky_slope: 0.2,
            classifier_conv: [32, 48],
            classifier_hidden: [100, 100],
            init_std: INIT_STD,
        }
    }
}

impl ArchConfig {
    pub fn generator(&self, image: ImageShape) -> Arch {
        Arch::Generator(GeneratorArch {
            image,
            noise_dim: self.noise_dim,
            features: self.generator_features,
            residual_blocks: self.residual_blocks,
            output_scale: GENERATOR_OUTPUT_SCALE,
        })
    }

    pub fn discriminator(&self, image: ImageShape) -> Arch {
        Arch::Discriminator(DiscriminatorArch {
            image,
            features: self.discriminator_features,
            leaky_slope: self.leaky_slope,
        })
    }

    pub fn classifier(&self, image: ImageShape, classes: usize) -> Arch {
        Arch::Classifier(ClassifierArch {
            image,
            classes,
            conv: self.classifier_conv,
            hidden: self.classifier_hidden,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSchedule {
    pub epochs: u64,
    /// Self-labeling is off (η = 0) for epochs before this one.
    pub eta_activation_epoch: u64,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_classifier: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub seed: u64,
    /// Checkpoint cadence in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Evaluation cadence in epochs; 0 evaluates only after the last epoch.
    pub eval_every: u64,
    /// Write one metrics line every this many steps.
    pub log_every: u64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            epochs: 500,
            eta_activation_epoch: 250,
            batch_size: 32,
            lr_generator: 1e-4,
            lr_discriminator: 1e-4,
            lr_classifier: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            seed: 0,
            checkpoint_every: 25,
            eval_every: 25,
            log_every: 1,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.eta_activation_epoch > self.epochs {
            return Err(Error::config(format!(
                "eta_activation_epoch ({}) exceeds epochs ({})",
                self.eta_activation_epoch, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        for (name, lr) in [
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
            ("lr_classifier", self.lr_classifier),
        ] {
            // Zero is accepted so that a null update can be requested
            // explicitly; negative or non-finite rates are rejected.
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {lr}")));
            }
        }
        self.adam(self.lr_generator).validate()
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: self.adam_beta1, beta2: self.adam_beta2, ..AdamConfig::default() }
    }

    /// Changes the run length, moving the self-labeling activation epoch
    /// proportionally so that it keeps its relative position.
    pub fn rescale_epochs(&mut self, epochs: u64) {
        self.eta_activation_epoch = (self.eta_activation_epoch * epochs).checked_div(self.epochs).unwrap_or(0);
        self.epochs = epochs;
    }

    /// η in effect during `epoch`.
    pub fn eta_at(&self, epoch: u64, eta: f64) -> f64 {
        if epoch < self.eta_activation_epoch {
            0.0
        } else {
            eta
        }
    }
}

/// Which round-trip constraint links the two generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyKind {
    /// Source labels must survive the round trip (weighted by ν).
    #[default]
    Class,
    /// Pixel-level reconstruction of the source image (weighted by ν).
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Labeled target samples used to pick σ.
    pub val_size: usize,
    /// Seed of the test-time noise draws.
    pub noise_seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { val_size: 1000, noise_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub setting: Setting,
    /// Root of the raw dataset files. Falls back to `$SYMGAN_DATA` when empty.
    pub data_root: PathBuf,
    pub texture_dir: Option<PathBuf>,
    /// Seed for dataset splits and synthetic data.
    pub data_seed: u64,
    /// Optional cap on every split (seeded subsampling).
    pub max_samples: Option<usize>,
    pub synthetic: SyntheticConfig,
    pub arch: ArchConfig,
    pub loss_weights: LossWeights,
    pub consistency: ConsistencyKind,
    pub schedule: TrainingSchedule,
    pub ssim: SsimConfig,
    pub ensemble: EnsembleConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            setting: Setting::MnistUsps,
            data_root: PathBuf::new(),
            texture_dir: None,
            data_seed: 0,
            max_samples: None,
            synthetic: SyntheticConfig::default(),
            arch: ArchConfig::default(),
            loss_weights: LossWeights::default(),
            consistency: ConsistencyKind::Class,
            schedule: TrainingSchedule::default(),
            ssim: SsimConfig::default(),
            ensemble: EnsembleConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Environment variable consulted when `data_root` is empty.
pub const DATA_ROOT_ENV: &str = "SYMGAN_DATA";

impl ExperimentConfig {
    /// Scaled-down synthetic task that trains in about a minute on one core.
    pub fn desk() -> Self {
        ExperimentConfig {
            setting: Setting::Synthetic,
            synthetic: SyntheticConfig::default(),
            arch: ArchConfig {
                noise_dim: 5,
                generator_features: 8,
                residual_blocks: 1,
                discriminator_features: [8, 16],
                leaky_slope: 0.2,
                classifier_conv: [8, 16],
                classifier_hidden: [64, 32],
                init_std: INIT_STD,
            },
            schedule: TrainingSchedule {
                epochs: 50,
                eta_activation_epoch: 25,
                checkpoint_every: 0,
                eval_every: 0,
                log_every: 10,
                lr_generator: 1e-3,
                lr_discriminator: 1e-3,
                lr_classifier: 1e-3,
                ..TrainingSchedule::default()
            },
            ensemble: EnsembleConfig { val_size: 200, noise_seed: 0 },
            output_dir: PathBuf::from("runs/desk"),
            ..ExperimentConfig::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::config(format!("unknown preset {other:?}; expected default or desk"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "config schema version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.loss_weights.validate()?;
        self.schedule.validate()?;
        self.ssim.validate()?;
        if self.setting == Setting::Synthetic {
            self.synthetic.validate()?;
        }
        if self.arch.init_std < 0.0 {
            return Err(Error::config("init_std must be >= 0"));
        }
        if self.ensemble.val_size == 0 {
            return Err(Error::config("ensemble.val_size must be at least 1"));
        }
        Ok(())
    }

    /// Parses TOML text on top of `base`, then applies overrides.
    pub fn from_toml_with(base: ExperimentConfig, text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree = toml::Value::try_from(&base).map_err(|e| Error::config(format!("cannot encode defaults: {e}")))?;
        let file: toml::Value = toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
        merge(&mut tree, file);
        // Decode once before overrides so that file errors are reported
        // against the file, not the merged tree.
        let _: ExperimentConfig = tree.clone().try_into().map_err(|e| Error::config(format!("config error: {e}")))?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: ExperimentConfig = tree.try_into().map_err(|e| Error::config(format!("config error after overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        Self::from_toml_with(Self::default(), text, overrides)
    }

    /// Reads `path` (if any) on top of `base` and applies overrides.
    pub fn load(base: ExperimentConfig, path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with(base, &text, overrides).map_err(|e| match (e, path) {
            (Error::Config(m), Some(p)) => Error::Config(format!("{}: {m}", p.display())),
            (e, _) => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("cannot encode config: {e}")))
    }

    /// Data root after applying the environment fallback.
    pub fn resolved_data_root(&self) -> PathBuf {
        if self.data_root.as_os_str().is_empty() {
            std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"))
        } else {
            self.data_root.clone()
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            data_root: self.resolved_data_root(),
            val_size: self.ensemble.val_size,
            seed: self.data_seed,
            synthetic: self.synthetic.clone(),
            texture_dir: self.texture_dir.clone(),
            max_samples: self.max_samples,
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`. The value is parsed as a TOML literal and falls
/// back to a plain string, so `setting=synthetic` needs no quotes.
pub fn apply_override(tree: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {spec:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::config(format!("override {spec:?} has an empty key")));
    }
    let value = parse_literal(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = tree;
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override {key}: {} is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!("split yields at least one part")
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        for cfg in [ExperimentConfig::default(), ExperimentConfig::desk()] {
            let text = cfg.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text, &[]).unwrap(), cfg);
        }
    }

    #[test]
    fn default_values() {
        let c = ExperimentConfig::default();
        assert_eq!(c.loss_weights.as_array(), [1.0, 10.0, 1.0, 10.0, 1.0, 1.0]);
        assert_eq!(c.schedule.epochs, 500);
        assert_eq!(c.schedule.eta_activation_epoch, 250);
        assert_eq!(c.schedule.batch_size, 32);
        assert_eq!(c.schedule.lr_generator, 1e-4);
        assert_eq!(c.schedule.lr_discriminator, 1e-4);
        assert_eq!(c.arch.noise_dim, 5);
        assert_eq!(c.arch.leaky_slope, 0.2);
        assert_eq!(c.ensemble.val_size, 1000);
    }

    #[test]
    fn precedence_is_override_then_file_then_default() {
        let file = "setting = \"synthetic\"\n[schedule]\nepochs = 7\nbatch_size = 16\n";
        let cfg = ExperimentConfig::from_toml(file, &["schedule.epochs=3".into(), "schedule.eta_activation_epoch=1".into(), "loss_weights.eta=0".into()]).unwrap();
        assert_eq!(cfg.schedule.epochs, 3);
        assert_eq!(cfg.schedule.batch_size, 16);
        assert_eq!(cfg.schedule.eta_activation_epoch, 1);
        assert_eq!(cfg.loss_weights.eta, 0.0);
        assert_eq!(cfg.schedule.lr_classifier, 1e-4);
        assert_eq!(cfg.setting, Setting::Synthetic);
    }

    #[test]
    fn bare_strings_are_accepted_in_overrides() {
        let cfg = ExperimentConfig::from_toml("", &["setting=synthetic".into(), "output_dir=/tmp/x".into()]).unwrap();
        assert_eq!(cfg.setting, Setting::Synthetic);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn errors_are_configuration_errors() {
        let bad = [
            ("[schedule]\nepochs = \"many\"\n", vec![]),
            ("nonsense = 1\n", vec![]),
            ("[loss_weights]\nalpha = -1.0\n", vec![]),
            ("", vec!["schedule.eta_activation_epoch=600".to_string()]),
            ("", vec!["no_equals_sign".to_string()]),
            ("setting = \"cifar\"\n", vec![]),
            ("[schedule\n", vec![]),
        ];
        for (text, ov) in bad {
            assert!(matches!(ExperimentConfig::from_toml(text, &ov), Err(Error::Config(_))), "{text:?} {ov:?}");
        }
    }

    #[test]
    fn parse_errors_carry_line_context() {
        let err = ExperimentConfig::from_toml("setting = \"synthetic\"\n[schedule]\nepochs = = 3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn rescaling_epochs_keeps_the_activation_fraction() {
        let mut s = TrainingSchedule::default();
        s.rescale_epochs(50);
        assert_eq!((s.epochs, s.eta_activation_epoch), (50, 25));
        s.rescale_epochs(5);
        assert_eq!((s.epochs, s.eta_activation_epoch), (5, 2));
        assert!(s.validate().is_ok());
    }

    #[test]
    fn eta_schedule() {
        let s = TrainingSchedule { epochs: 10, eta_activation_epoch: 4, ..Default::default() };
        assert_eq!(s.eta_at(3, 1.0), 0.0);
        assert_eq!(s.eta_at(4, 1.0), 1.0);
    }
}
