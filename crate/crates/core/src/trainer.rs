//! Alternating optimization of the six networks.
//!
//! Every step first updates both discriminators on detached translations,
//! then takes one joint Adam step for the generators and classifiers on the
//! weighted sum of all active terms.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ConsistencyKind, ExperimentConfig, TrainingSchedule};
use crate::data::{
    batch_stream, cyclic_batch, preprocess_discriminative_input, preprocess_generator_input, Dataset, DomainMeta,
    DomainPair, ImageBatch, LabelBatch, NoiseBatch,
};
use crate::error::{Error, Result};
use crate::inference::{component_probs, select_sigma, EnsembleWeights};
use crate::losses::{
    cross_entropy_logits, cycle_graph, lsgan_discriminator_graph, lsgan_generator_graph, pseudo_labels_from_logits,
    rechain, total_loss, translate, weighted_sum, LossReport, LossWeights, Term,
};
use crate::metrics::prob_accuracy;
use crate::models::checkpoint::ArrayFile;
use crate::models::{Mode, ModelState, Param};
use crate::optim::Adam;
use crate::tensor::Tensor;

/// Offset mixed into the schedule seed for the target batch order.
const TARGET_STREAM_SALT: u64 = 0x7461_7267_6574;
/// Offset mixed into the schedule seed for the generator noise.
const NOISE_STREAM_SALT: u64 = 0x006e_6f69_7365;

/// The six networks, by role.
pub struct Networks {
    pub g_st: ModelState,
    pub g_ts: ModelState,
    pub d_s: ModelState,
    pub d_t: ModelState,
    pub c_s: ModelState,
    pub c_t: ModelState,
}

/// File stems used in checkpoint directories, in [`Networks::all`] order.
pub const NETWORK_NAMES: [&str; 6] = ["g_st", "g_ts", "d_s", "d_t", "c_s", "c_t"];

impl Networks {
    pub fn build(cfg: &ExperimentConfig, meta: &DomainMeta, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = cfg.arch.init_std;
        let shape = meta.shape;
        Ok(Networks {
            g_st: ModelState::build(cfg.arch.generator(shape), std, &mut rng)?,
            g_ts: ModelState::build(cfg.arch.generator(shape), std, &mut rng)?,
            d_s: ModelState::build(cfg.arch.discriminator(shape), std, &mut rng)?,
            d_t: ModelState::build(cfg.arch.discriminator(shape), std, &mut rng)?,
            c_s: ModelState::build(cfg.arch.classifier(shape, meta.classes), std, &mut rng)?,
            c_t: ModelState::build(cfg.arch.classifier(shape, meta.classes), std, &mut rng)?,
        })
    }

    pub fn all(&self) -> [(&'static str, &ModelState); 6] {
        [
            ("g_st", &self.g_st),
            ("g_ts", &self.g_ts),
            ("d_s", &self.d_s),
            ("d_t", &self.d_t),
            ("c_s", &self.c_s),
            ("c_t", &self.c_t),
        ]
    }

    pub fn set_mode(&self, mode: Mode) {
        for (_, m) in self.all() {
            m.set_mode(mode);
        }
    }

    pub fn zero_grad(&self) {
        for (_, m) in self.all() {
            m.zero_grad();
        }
    }

    /// Copies of every parameter of the named network.
    pub fn snapshot(&self, name: &str) -> Vec<Vec<f32>> {
        self.all()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, m)| m.params().iter().map(|p| p.tensor.to_vec()).collect())
            .unwrap_or_default()
    }
}

/// One Adam state per network.
pub struct Optimizers {
    pub g_st: Adam,
    pub g_ts: Adam,
    pub d_s: Adam,
    pub d_t: Adam,
    pub c_s: Adam,
    pub c_t: Adam,
}

impl Optimizers {
    pub fn new(nets: &Networks, schedule: &TrainingSchedule) -> Self {
        let g = schedule.adam(schedule.lr_generator);
        let d = schedule.adam(schedule.lr_discriminator);
        let c = schedule.adam(schedule.lr_classifier);
        Optimizers {
            g_st: Adam::new(g, &nets.g_st.params()),
            g_ts: Adam::new(g, &nets.g_ts.params()),
            d_s: Adam::new(d, &nets.d_s.params()),
            d_t: Adam::new(d, &nets.d_t.params()),
            c_s: Adam::new(c, &nets.c_s.params()),
            c_t: Adam::new(c, &nets.c_t.params()),
        }
    }

    fn all(&self) -> [(&'static str, &Adam); 6] {
        [
            ("g_st", &self.g_st),
            ("g_ts", &self.g_ts),
            ("d_s", &self.d_s),
            ("d_t", &self.d_t),
            ("c_s", &self.c_s),
            ("c_t", &self.c_t),
        ]
    }

    fn all_mut(&mut self) -> [(&'static str, &mut Adam); 6] {
        [
            ("g_st", &mut self.g_st),
            ("g_ts", &mut self.g_ts),
            ("d_s", &mut self.d_s),
            ("d_t", &mut self.d_t),
            ("c_s", &mut self.c_s),
            ("c_t", &mut self.c_t),
        ]
    }
}

/// Counters and settings that travel with a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimization steps.
    pub step: u64,
    /// Configured weights; η is gated by the schedule at run time.
    pub weights: LossWeights,
    pub eta_activation_epoch: u64,
    pub consistency: ConsistencyKind,
    pub rng: ChaCha8Rng,
}

pub struct TrainerState {
    pub nets: Networks,
    pub opt: Optimizers,
    pub progress: Progress,
}

impl TrainerState {
    /// Freshly initialized networks and optimizers for `cfg`.
    pub fn new(cfg: &ExperimentConfig, meta: &DomainMeta) -> Result<Self> {
        cfg.validate()?;
        let s = &cfg.schedule;
        let nets = Networks::build(cfg, meta, s.seed)?;
        nets.set_mode(Mode::Train);
        let opt = Optimizers::new(&nets, s);
        Ok(TrainerState {
            nets,
            opt,
            progress: Progress {
                epoch: 0,
                step: 0,
                weights: cfg.loss_weights,
                eta_activation_epoch: s.eta_activation_epoch,
                consistency: cfg.consistency,
                rng: ChaCha8Rng::seed_from_u64(s.seed ^ NOISE_STREAM_SALT),
            },
        })
    }

    /// Weights in effect for the current epoch.
    pub fn active_weights(&self) -> LossWeights {
        let p = &self.progress;
        let mut w = p.weights;
        if p.epoch < p.eta_activation_epoch {
            w.eta = 0.0;
        }
        w
    }

    fn noise(&mut self, n: usize) -> NoiseBatch {
        let dim = self.nets.g_st.generator_arch().map_or(0, |a| a.noise_dim);
        NoiseBatch::sample(n, dim, &mut self.progress.rng)
    }
}

/// A batch in both input ranges the networks need.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[-0.5, 0.5]`, fed to generators.
    pub gen: ImageBatch,
    /// `[-127.5, 127.5]`, fed to discriminators and classifiers.
    pub disc: ImageBatch,
    pub labels: Option<LabelBatch>,
}

impl Batch {
    pub fn from_raw(raw: &ImageBatch, labels: Option<LabelBatch>) -> Result<Self> {
        Ok(Batch { gen: preprocess_generator_input(raw)?, disc: preprocess_discriminative_input(raw)?, labels })
    }

    pub fn from_dataset(data: &Dataset, idx: &[usize]) -> Result<Self> {
        Self::from_raw(&data.images.batch(idx), data.label_batch(idx))
    }

    pub fn len(&self) -> usize {
        self.gen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gen.is_empty()
    }
}

fn finite(term: &str, value: f64, step: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { term: term.to_string(), step })
    }
}

fn step_with(opt: &mut Adam, params: &[&Param<f32>]) -> Result<()> {
    opt.step(params)
}

/// One discriminator update followed by one joint generator/classifier
/// update. Source batches must be labeled.
pub fn train_step(state: &mut TrainerState, src: &Batch, tgt: &Batch) -> Result<LossReport> {
    let w = state.active_weights();
    let step = state.progress.step;
    let y_s = src.labels.as_ref().ok_or_else(|| Error::contract("source batch must carry labels"))?;
    if src.len() != y_s.len() {
        return Err(Error::contract("source images and labels differ in length"));
    }
    let need_st = w.alpha > 0.0 || w.beta > 0.0;
    let need_ts = w.gamma > 0.0 || w.eta > 0.0;

    let z_s = state.noise(src.len());
    let z_t = state.noise(tgt.len());
    let xs_g = src.gen.to_tensor();
    let xs_d = src.disc.to_tensor();
    let xt_d = tgt.disc.to_tensor();
    let nets = &state.nets;
    // The translations built here serve both phases: detached as fakes for
    // the discriminators, then as differentiable inputs for the joint step.
    let x_st = if need_st { Some(translate(&nets.g_st, &xs_g, &z_s)?) } else { None };
    let x_ts = if need_ts { Some(translate(&nets.g_ts, &tgt.gen.to_tensor(), &z_t)?) } else { None };

    // Discriminator phase.
    nets.zero_grad();
    let mut disc_t = None;
    let mut disc_s = None;
    let mut d_loss: Option<Tensor> = None;
    if let (true, Some(fake)) = (w.alpha > 0.0, &x_st) {
        let l = lsgan_discriminator_graph(&nets.d_t, &xt_d, fake)?;
        disc_t = Some(finite("disc_t", l.item() as f64, step)?);
        d_loss = Some(l);
    }
    if let (true, Some(fake)) = (w.gamma > 0.0, &x_ts) {
        let l = lsgan_discriminator_graph(&nets.d_s, &xs_d, fake)?;
        disc_s = Some(finite("disc_s", l.item() as f64, step)?);
        d_loss = Some(match d_loss {
            Some(prev) => prev.add(&l),
            None => l,
        });
    }
    if let Some(l) = d_loss {
        l.backward();
        if disc_t.is_some() {
            step_with(&mut state.opt.d_t, &nets.d_t.params())?;
        }
        if disc_s.is_some() {
            step_with(&mut state.opt.d_s, &nets.d_s.params())?;
        }
    }

    // Joint generator and classifier phase.
    nets.zero_grad();
    let mut terms: Vec<(Term, Tensor)> = Vec::new();
    if let Some(x_st) = &x_st {
        if w.alpha > 0.0 {
            terms.push((Term::AdvT, lsgan_generator_graph(&nets.d_t, x_st)?));
        }
        if w.beta > 0.0 {
            terms.push((Term::ClsT, cross_entropy_logits(&nets.c_t.forward_classifier(x_st)?, y_s)?));
        }
    }
    if let Some(x_ts) = &x_ts {
        if w.gamma > 0.0 {
            terms.push((Term::AdvS, lsgan_generator_graph(&nets.d_s, x_ts)?));
        }
        if w.eta > 0.0 {
            let logits = nets.c_s.forward_classifier(x_ts)?;
            let pseudo = pseudo_labels_from_logits(&logits.detach())?;
            terms.push((Term::SelfLabel, cross_entropy_logits(&logits, &pseudo)?));
        }
    }
    if w.mu > 0.0 {
        terms.push((Term::ClsS, cross_entropy_logits(&nets.c_s.forward_classifier(&xs_d)?, y_s)?));
    }
    if w.nu > 0.0 {
        // The round trip draws its own noise for both generators.
        let z_fwd = NoiseBatch::sample(src.len(), z_s.dim(), &mut state.progress.rng);
        let z_back = NoiseBatch::sample(src.len(), z_s.dim(), &mut state.progress.rng);
        let there = translate(&nets.g_st, &xs_g, &z_fwd)?;
        let back = translate(&nets.g_ts, &rechain(&there), &z_back)?;
        let cons = match state.progress.consistency {
            ConsistencyKind::Class => cross_entropy_logits(&nets.c_s.forward_classifier(&back)?, y_s)?,
            ConsistencyKind::Cycle => cycle_graph(&xs_g, &back)?,
        };
        terms.push((Term::Consistency, cons));
    }
    let mut values = Vec::with_capacity(terms.len());
    for (t, v) in &terms {
        values.push((*t, finite(t.name(), v.item() as f64, step)?));
    }
    let mut report = total_loss(&w, &values)?;
    finite("total", report.total, step)?;
    if let Some(total) = weighted_sum(&w, &terms) {
        total.backward();
        let opt = &mut state.opt;
        step_with(&mut opt.g_st, &nets.g_st.params())?;
        step_with(&mut opt.g_ts, &nets.g_ts.params())?;
        step_with(&mut opt.c_s, &nets.c_s.params())?;
        step_with(&mut opt.c_t, &nets.c_t.params())?;
    }
    report.disc_t = disc_t;
    report.disc_s = disc_s;
    state.progress.step += 1;
    Ok(report)
}

/// Target accuracies of both classifiers and their ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: u64,
    pub step: u64,
    /// `C_t(x_t)`.
    pub acc_ct: f64,
    /// `C_s(G_ts(x_t))`.
    pub acc_cs: f64,
    /// Ensemble with σ chosen on the validation subset.
    pub acc_ensemble: f64,
    pub sigma: f64,
    /// `C_s(x_t)`: the source classifier applied without translation.
    pub acc_source_only: f64,
}

/// Evaluates on the labeled target set. Networks are switched to eval mode
/// for the duration and restored to train mode afterwards.
pub fn evaluate(state: &TrainerState, data: &DomainPair, noise_seed: u64) -> Result<EvalRecord> {
    let nets = &state.nets;
    nets.set_mode(Mode::Eval);
    let result = (|| {
        let labels = data.target.all_labels()?;
        let val_labels = data.target_val.all_labels()?;
        let sel = select_sigma(&nets.c_s, &nets.c_t, &nets.g_ts, &data.target_val.images.all(), &val_labels, noise_seed)?;
        let x = data.target.images.all();
        let idx: Vec<usize> = (0..x.len()).collect();
        let comp = component_probs(&nets.c_s, &nets.c_t, &nets.g_ts, &x, &idx, noise_seed)?;
        let ens = comp.combine(sel.weights)?;
        let direct = crate::models::classify(&nets.c_s, &preprocess_discriminative_input(&x)?)?;
        Ok(EvalRecord {
            epoch: state.progress.epoch,
            step: state.progress.step,
            acc_ct: prob_accuracy(&comp.target, &labels)?,
            acc_cs: prob_accuracy(&comp.source, &labels)?,
            acc_ensemble: prob_accuracy(&ens, &labels)?,
            sigma: sel.weights.sigma(),
            acc_source_only: prob_accuracy(&direct, &labels)?,
        })
    })();
    nets.set_mode(Mode::Train);
    result
}

/// Line-delimited metrics log entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricsRecord {
    Step { step: u64, epoch: u64, eta: f64, report: LossReport },
    Eval(EvalRecord),
}

/// Where a run writes its artifacts, and what it resumes from.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: Option<PathBuf>,
    pub resume_from: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub state: TrainerState,
    /// Report of every step run by this call.
    pub reports: Vec<LossReport>,
    pub evals: Vec<EvalRecord>,
}

impl TrainOutcome {
    pub fn final_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }
}

pub fn checkpoint_dir(out: &Path, epoch: u64) -> PathBuf {
    out.join("checkpoints").join(format!("epoch-{epoch:04}"))
}

fn write_io(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes one file per network, the optimizer moments, the progress
/// counters and a copy of the config.
pub fn save_checkpoint(state: &TrainerState, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, m) in state.nets.all() {
        m.save(&dir.join(format!("{name}.ckpt")))?;
    }
    let mut opt = ArrayFile::default();
    let mut steps = serde_json::Map::new();
    for (name, a) in state.opt.all() {
        a.write_into(&mut opt, &format!("{name}/"));
        steps.insert(name.to_string(), a.steps().into());
    }
    opt.meta = serde_json::Value::Object(steps);
    opt.save(&dir.join("optimizer.ckpt"))?;
    let progress = serde_json::to_vec_pretty(&state.progress).map_err(|e| Error::Checkpoint(e.to_string()))?;
    write_io(&dir.join("state.json"), &progress)?;
    write_io(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())
}

/// Restores a state written by [`save_checkpoint`]. The schedule supplies
/// optimizer hyperparameters; everything else comes from the directory.
pub fn load_checkpoint(dir: &Path, schedule: &TrainingSchedule) -> Result<TrainerState> {
    if !dir.is_dir() {
        return Err(Error::Checkpoint(format!("no checkpoint directory at {}", dir.display())));
    }
    let load = |name: &str| ModelState::load(&dir.join(format!("{name}.ckpt")));
    let nets = Networks {
        g_st: load("g_st")?,
        g_ts: load("g_ts")?,
        d_s: load("d_s")?,
        d_t: load("d_t")?,
        c_s: load("c_s")?,
        c_t: load("c_t")?,
    };
    nets.set_mode(Mode::Train);
    let mut opt = Optimizers::new(&nets, schedule);
    let file = ArrayFile::load(&dir.join("optimizer.ckpt"))?;
    for (name, a) in opt.all_mut() {
        let steps = file
            .meta
            .get(name)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks the step count of {name}")))?;
        a.read_from(&file, &format!("{name}/"), steps)?;
    }
    let path = dir.join("state.json");
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let progress: Progress = serde_json::from_slice(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(TrainerState { nets, opt, progress })
}

/// Most recent `epoch-NNNN` directory under `out/checkpoints`.
pub fn latest_checkpoint(out: &Path) -> Option<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out.join("checkpoints"))
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("epoch-")))
        .collect();
    dirs.sort();
    dirs.pop()
}

struct MetricsLog {
    file: Option<(PathBuf, File)>,
}

impl MetricsLog {
    fn open(out: Option<&Path>) -> Result<Self> {
        let Some(out) = out else { return Ok(MetricsLog { file: None }) };
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join("metrics.jsonl");
        let f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(MetricsLog { file: Some((path, f)) })
    }

    fn write(&mut self, rec: &MetricsRecord) -> Result<()> {
        if let Some((path, f)) = &mut self.file {
            let line = serde_json::to_string(rec).expect("metrics records serialize");
            writeln!(f, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }
}

/// Runs the epoch loop from a fresh state or from `opts.resume_from`.
pub fn train(cfg: &ExperimentConfig, data: &DomainPair, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    let s = &cfg.schedule;
    let mut state = match &opts.resume_from {
        Some(dir) => load_checkpoint(dir, s)?,
        None => TrainerState::new(cfg, &data.meta)?,
    };
    let mut log = MetricsLog::open(opts.out_dir.as_deref())?;
    let mut reports = Vec::new();
    let mut evals = Vec::new();
    let target_seed = s.seed ^ TARGET_STREAM_SALT;
    let start = state.progress.epoch;
    if start < s.epochs {
        for epoch in start..s.epochs {
            state.progress.epoch = epoch;
            let eta = state.active_weights().eta;
            for item in batch_stream(&data.source, s.batch_size, s.seed, epoch)? {
                let src = Batch::from_raw(&item.images, item.labels)?;
                let tidx = cyclic_batch(data.target.len(), s.batch_size, target_seed, state.progress.step)?;
                let tgt = Batch::from_raw(&data.target.images.batch(&tidx), None)?;
                let step = state.progress.step;
                let report = train_step(&mut state, &src, &tgt)?;
                if s.log_every > 0 && step % s.log_every == 0 {
                    log.write(&MetricsRecord::Step { step, epoch, eta, report: report.clone() })?;
                }
                reports.push(report);
            }
            state.progress.epoch = epoch + 1;
            let done = epoch + 1;
            let last = done == s.epochs;
            if last || (s.eval_every > 0 && done % s.eval_every == 0) {
                let rec = evaluate(&state, data, cfg.ensemble.noise_seed)?;
                log::info!(
                    "epoch {done}: C_t {:.4}  C_s(G_ts) {:.4}  ensemble {:.4} (sigma {:.1})",
                    rec.acc_ct,
                    rec.acc_cs,
                    rec.acc_ensemble,
                    rec.sigma
                );
                log.write(&MetricsRecord::Eval(rec.clone()))?;
                evals.push(rec);
            }
            if let Some(out) = &opts.out_dir {
                if last || (s.checkpoint_every > 0 && done % s.checkpoint_every == 0) {
                    save_checkpoint(&state, cfg, &checkpoint_dir(out, done))?;
                }
            }
        }
    } else if let Some(out) = &opts.out_dir {
        if opts.resume_from.is_none() {
            save_checkpoint(&state, cfg, &checkpoint_dir(out, 0))?;
        }
    }
    Ok(TrainOutcome { state, reports, evals })
}

/// Ensemble accuracy with a fixed σ on the full target set.
pub fn ensemble_accuracy(state: &TrainerState, data: &DomainPair, w: EnsembleWeights, noise_seed: u64) -> Result<f64> {
    let nets = &state.nets;
    nets.set_mode(Mode::Eval);
    let result = (|| {
        let x = data.target.images.all();
        let idx: Vec<usize> = (0..x.len()).collect();
        let comp = component_probs(&nets.c_s, &nets.c_t, &nets.g_ts, &x, &idx, noise_seed)?;
        prob_accuracy(&comp.combine(w)?, &data.target.all_labels()?)
    })();
    nets.set_mode(Mode::Train);
    result
}
