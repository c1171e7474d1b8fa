//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use symgan_core::config::ExperimentConfig;
use symgan_core::data::{load_domain_pair, to_unit, Dataset, DomainPair, ImageBatch, Setting};
use symgan_core::inference::{component_probs, prediction_records, translate_raw, EnsembleWeights};
use symgan_core::metrics::ablation::ablation_configs;
use symgan_core::metrics::{ablation_matrix, embed_2d, mean_intra_class_ssim, run_sweep, SsimRow, SsimTable, TsneConfig};
use symgan_core::models::{Mode, ModelState};
use symgan_core::trainer::{
    evaluate, latest_checkpoint, load_checkpoint, train, EvalRecord, TrainOptions, TrainerState,
};

use crate::render;
use crate::run_dir::{write_json, write_text, RunDir, CONFIG_FILE};
use crate::{ConfigArgs, ReportArgs};

/// Resolves the configuration: preset defaults, then the file, then `--set`
/// overrides, then the dedicated flags.
pub fn load_config(args: &ConfigArgs, data_root: Option<&Path>) -> Result<ExperimentConfig> {
    let base = ExperimentConfig::preset(&args.preset)?;
    let mut overrides = args.set.clone();
    if let Some(s) = &args.setting {
        let setting: Setting = s.parse()?;
        overrides.push(format!("setting={}", quote(setting.name())));
    }
    if let Some(seed) = args.seed {
        overrides.push(format!("schedule.seed={seed}"));
    }
    let mut cfg = ExperimentConfig::load(base, args.config.as_deref(), &overrides)?;
    if let Some(epochs) = args.epochs {
        let explicit = args.set.iter().any(|o| o.trim_start().starts_with("schedule.eta_activation_epoch"));
        if explicit {
            cfg.schedule.epochs = epochs;
        } else {
            cfg.schedule.rescale_epochs(epochs);
        }
    }
    apply_locations(&mut cfg, data_root, args.out.as_deref());
    cfg.validate()?;
    Ok(cfg)
}

fn apply_locations(cfg: &mut ExperimentConfig, data_root: Option<&Path>, out: Option<&Path>) {
    if let Some(root) = data_root {
        cfg.data_root = root.to_path_buf();
    }
    if let Some(out) = out {
        cfg.output_dir = out.to_path_buf();
    }
}

/// A TOML basic string literal.
fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings always encode")
}

fn load_data(cfg: &ExperimentConfig) -> Result<DomainPair> {
    let data = load_domain_pair(cfg.setting, &cfg.load_options())
        .with_context(|| format!("loading the {} data", cfg.setting))?;
    log::info!(
        "{}: {} source, {} target ({} for sigma selection) images of {:?}",
        data.meta.setting,
        data.source.len(),
        data.target.len(),
        data.target_val.len(),
        data.meta.shape
    );
    Ok(data)
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    setting: &'a str,
    #[serde(flatten)]
    eval: &'a EvalRecord,
}

/// The three accuracy rows: each classifier alone and the ensemble.
pub fn summary_text(setting: &str, e: &EvalRecord) -> String {
    let mut out = format!("# target accuracy on {setting} after epoch {} (step {})\n", e.epoch, e.step);
    out.push_str(&format!("{:<28}{:>10}\n", "classifier", "accuracy"));
    out.push_str(&format!("{:<28}{:>10.4}\n", "C_t", e.acc_ct));
    out.push_str(&format!("{:<28}{:>10.4}\n", "C_s(G_ts)", e.acc_cs));
    out.push_str(&format!("{:<28}{:>10.4}\n", format!("ensemble (sigma={:.1})", e.sigma), e.acc_ensemble));
    out.push_str(&format!("# C_s on untranslated target images: {:.4}\n", e.acc_source_only));
    out
}

fn write_summary(dir: &Path, setting: &str, e: &EvalRecord) -> Result<String> {
    let text = summary_text(setting, e);
    write_text(&dir.join("summary.txt"), &text)?;
    write_json(&dir.join("summary.json"), &Summary { setting, eval: e })?;
    Ok(text)
}

pub fn cmd_train(args: &ConfigArgs, data_root: Option<&Path>, resume: bool) -> Result<()> {
    let cfg = load_config(args, data_root)?;
    let data = load_data(&cfg)?;
    let run = RunDir::acquire(&cfg.output_dir)?;
    let manifest = run.record("train", &cfg)?;
    log::info!("run {} (config {}), seed {}", run.path().display(), &manifest.config_hash[..12], manifest.seed);
    let resume_from = if resume {
        let latest = latest_checkpoint(run.path());
        match &latest {
            Some(dir) => log::info!("resuming from {}", dir.display()),
            None => log::warn!("no checkpoint under {}; starting from scratch", run.path().display()),
        }
        latest
    } else {
        None
    };
    let outcome = train(&cfg, &data, &TrainOptions { out_dir: Some(run.path().to_path_buf()), resume_from })?;
    let eval = match outcome.final_eval() {
        Some(e) => e.clone(),
        None => evaluate(&outcome.state, &data, cfg.ensemble.noise_seed)?,
    };
    print!("{}", write_summary(run.path(), &data.meta.setting, &eval)?);
    Ok(())
}

/// Accepts a checkpoint directory or a run directory (latest checkpoint).
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join("state.json").is_file() {
        return Ok(path.to_path_buf());
    }
    if let Some(latest) = latest_checkpoint(path) {
        return Ok(latest);
    }
    bail!("no checkpoint found at {} (expected a checkpoint or run directory)", path.display())
}

struct Loaded {
    cfg: ExperimentConfig,
    state: TrainerState,
    data: DomainPair,
    dir: PathBuf,
}

fn load_run(checkpoint: &Path, overrides: &[String], data_root: Option<&Path>) -> Result<Loaded> {
    let dir = resolve_checkpoint(checkpoint)?;
    let mut cfg = ExperimentConfig::load(ExperimentConfig::default(), Some(&dir.join(CONFIG_FILE)), overrides)?;
    apply_locations(&mut cfg, data_root, None);
    let state = load_checkpoint(&dir, &cfg.schedule)?;
    let data = load_data(&cfg)?;
    log::info!("loaded {} (epoch {}, step {})", dir.display(), state.progress.epoch, state.progress.step);
    Ok(Loaded { cfg, state, data, dir })
}

pub fn cmd_evaluate(
    checkpoint: &Path,
    overrides: &[String],
    data_root: Option<&Path>,
    out: Option<&Path>,
    predictions: Option<&Path>,
) -> Result<()> {
    let run = load_run(checkpoint, overrides, data_root)?;
    let eval = evaluate(&run.state, &run.data, run.cfg.ensemble.noise_seed)?;
    let text = match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            write_summary(dir, &run.data.meta.setting, &eval)?
        }
        None => summary_text(&run.data.meta.setting, &eval),
    };
    print!("{text}");
    if let Some(path) = predictions {
        write_predictions(&run, eval.sigma, path)?;
    }
    Ok(())
}

fn write_predictions(run: &Loaded, sigma: f64, path: &Path) -> Result<()> {
    let nets = &run.state.nets;
    nets.set_mode(Mode::Eval);
    let x = run.data.target.images.all();
    let idx: Vec<usize> = (0..x.len()).collect();
    let comps = component_probs(&nets.c_s, &nets.c_t, &nets.g_ts, &x, &idx, run.cfg.ensemble.noise_seed)?;
    let probs = comps.combine(EnsembleWeights::new(sigma)?)?;
    nets.set_mode(Mode::Train);
    let mut f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    for rec in prediction_records(&probs, &idx, sigma)? {
        writeln!(f, "{}", serde_json::to_string(&rec)?).with_context(|| format!("cannot write {}", path.display()))?;
    }
    log::info!("wrote {} predictions to {}", idx.len(), path.display());
    Ok(())
}

pub fn cmd_ablate(args: &ConfigArgs, data_root: Option<&Path>, seeds: &[u64]) -> Result<()> {
    let cfg = load_config(args, data_root)?;
    let data = load_data(&cfg)?;
    let run = RunDir::acquire(&cfg.output_dir)?;
    run.record("ablate", &cfg)?;
    let configs_dir = run.path().join("ablation_configs");
    fs::create_dir_all(&configs_dir).with_context(|| format!("cannot create {}", configs_dir.display()))?;
    for (i, (row, row_cfg)) in ablation_configs(&cfg).iter().enumerate() {
        let slug: String = row.name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect();
        write_text(&configs_dir.join(format!("{}-{}.toml", i + 1, slug.trim_matches('_'))), &row_cfg.to_toml()?)?;
    }
    let matrix = ablation_matrix(&cfg, &data, seeds, |name, seed, acc| {
        log::info!("{name} seed {seed}: ensemble accuracy {acc:.4}");
    })?;
    let text = matrix.to_text();
    write_text(&run.path().join("ablation.txt"), &text)?;
    write_json(&run.path().join("ablation.json"), &matrix)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_sweep(args: &ConfigArgs, data_root: Option<&Path>, seeds: &[u64], values: &[f64]) -> Result<()> {
    let cfg = load_config(args, data_root)?;
    let data = load_data(&cfg)?;
    let run = RunDir::acquire(&cfg.output_dir)?;
    run.record("sweep", &cfg)?;
    let result = run_sweep(&cfg, &data, values, seeds, |r| {
        log::info!("{}={} seed {}: accuracy {:?}", r.parameter.label(), r.value, r.seed, r.accuracy);
    })?;
    let text = result.to_text();
    write_text(&run.path().join("sweep.txt"), &text)?;
    write_json(&run.path().join("sweep.json"), &result)?;
    print!("{text}");
    if !result.all_finite() {
        log::warn!("some sweep runs produced non-finite losses");
    }
    Ok(())
}

/// `n` indices spread evenly over `0..len` (all of them when `n >= len`).
fn spread(len: usize, n: usize) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    (0..n).map(|i| i * len / n).collect()
}

fn raw_values(batch: &ImageBatch) -> Vec<f64> {
    batch.data().iter().map(|&v| f64::from(v)).collect()
}

/// A subset of a labeled dataset with its images translated by `g`.
struct Translated {
    labels: Vec<usize>,
    original: ImageBatch,
    generated: ImageBatch,
}

fn translate_subset(g: &ModelState, d: &Dataset, n: usize, noise_seed: u64) -> Result<Translated> {
    let idx = spread(d.len(), n);
    let labels = d.label_batch(&idx).context("translated subset needs labels")?.labels().to_vec();
    let original = d.images.batch(&idx);
    g.set_mode(Mode::Eval);
    let generated = translate_raw(g, &original, &idx, noise_seed);
    g.set_mode(Mode::Train);
    Ok(Translated { labels, original, generated: generated? })
}

struct Translations {
    source_to_target: Translated,
    target_to_source: Translated,
}

fn translations(run: &Loaded, n: usize) -> Result<Translations> {
    let seed = run.cfg.ensemble.noise_seed;
    Ok(Translations {
        source_to_target: translate_subset(&run.state.nets.g_st, &run.data.source, n, seed)?,
        target_to_source: translate_subset(&run.state.nets.g_ts, &run.data.target, n, seed)?,
    })
}

fn ssim_table(run: &Loaded, t: &Translations, pairs: usize) -> Result<SsimTable> {
    let cfg = &run.cfg.ssim;
    let shape = run.data.meta.shape;
    let seed = run.cfg.data_seed;
    let mean = |b: &ImageBatch, labels: &[usize]| -> Result<f64> {
        Ok(mean_intra_class_ssim(&raw_values(b), shape, labels, pairs, seed, cfg)?.mean)
    };
    let (st, ts) = (&t.source_to_target, &t.target_to_source);
    let row = SsimRow {
        setting: run.data.meta.setting.clone(),
        source: mean(&st.original, &st.labels)?,
        target_to_source: mean(&ts.generated, &ts.labels)?,
        source_to_target: mean(&st.generated, &st.labels)?,
        target: mean(&ts.original, &ts.labels)?,
    };
    Ok(SsimTable { config: cfg.describe(), rows: vec![row] })
}

fn write_ssim(out: &Path, table: &SsimTable) -> Result<()> {
    write_text(&out.join("ssim.txt"), &table.to_text())?;
    write_json(&out.join("ssim.json"), table)
}

#[derive(Debug, Serialize)]
struct EmbeddingPoint {
    x: f64,
    y: f64,
    domain: &'static str,
    label: usize,
}

pub const EMBED_DOMAINS: [&str; 3] = ["source", "target", "source_to_target"];

fn embedding(run: &Loaded, t: &Translations, n_pca: usize, seed: u64, out: &Path) -> Result<usize> {
    let (st, ts) = (&t.source_to_target, &t.target_to_source);
    let groups: [(&ImageBatch, &[usize]); 3] =
        [(&st.original, &st.labels), (&ts.original, &ts.labels), (&st.generated, &st.labels)];
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for (g, (batch, labels)) in groups.iter().enumerate() {
        rows.extend(to_unit(batch).data().iter().map(|&v| f64::from(v)));
        meta.extend(labels.iter().map(|&l| (g, l)));
    }
    let n = meta.len();
    let d = run.data.meta.shape.pixels();
    let emb = embed_2d(&rows, n, d, n_pca, &TsneConfig::default(), seed)?;
    let path = out.join("embedding.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot create {}", path.display()))?;
    for (p, &(g, label)) in emb.points.iter().zip(&meta) {
        w.serialize(EmbeddingPoint { x: p[0], y: p[1], domain: EMBED_DOMAINS[g], label })?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    let groups: Vec<usize> = meta.iter().map(|&(g, _)| g).collect();
    render::scatter(&emb.points, &groups, 640, &out.join("embedding.png"))?;
    let colours: BTreeMap<&str, [u8; 3]> = EMBED_DOMAINS.iter().copied().zip(render::PALETTE).collect();
    write_json(&out.join("embedding.json"), &serde_json::json!({ "meta": emb.meta, "points": n, "colours": colours }))?;
    Ok(n)
}

/// Up to one example per class, originals above their translations.
fn grids(t: &Translations, out: &Path) -> Result<()> {
    for (name, tr) in [("grid_source_to_target.png", &t.source_to_target), ("grid_target_to_source.png", &t.target_to_source)] {
        let mut seen = std::collections::BTreeSet::new();
        let pick: Vec<usize> = (0..tr.labels.len()).filter(|&i| seen.insert(tr.labels[i])).collect();
        render::paired_grid(&tr.original.select(&pick), &tr.generated.select(&pick), 3, &out.join(name))?;
    }
    Ok(())
}

fn report_dir(run: &Loaded, out: Option<&Path>) -> Result<PathBuf> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| run.dir.join("report"));
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

pub fn cmd_ssim_report(a: &ReportArgs, data_root: Option<&Path>) -> Result<()> {
    let run = load_run(&a.checkpoint, &a.set, data_root)?;
    let out = report_dir(&run, a.out.as_deref())?;
    let t = translations(&run, a.samples)?;
    let table = ssim_table(&run, &t, a.pairs)?;
    write_ssim(&out, &table)?;
    print!("{}", table.to_text());
    Ok(())
}

pub fn cmd_embed(a: &ReportArgs, data_root: Option<&Path>) -> Result<()> {
    let run = load_run(&a.checkpoint, &a.set, data_root)?;
    let out = report_dir(&run, a.out.as_deref())?;
    let t = translations(&run, a.samples)?;
    let n = embedding(&run, &t, a.pca, a.seed, &out)?;
    println!("embedded {n} images into {}", out.join("embedding.csv").display());
    Ok(())
}

pub fn cmd_report(a: &ReportArgs, data_root: Option<&Path>) -> Result<()> {
    let run = load_run(&a.checkpoint, &a.set, data_root)?;
    let out = report_dir(&run, a.out.as_deref())?;
    let t = translations(&run, a.samples)?;
    grids(&t, &out)?;
    let table = ssim_table(&run, &t, a.pairs)?;
    write_ssim(&out, &table)?;
    let n = embedding(&run, &t, a.pca, a.seed, &out)?;
    print!("{}", table.to_text());
    println!("embedded {n} images; grids, tables and plots in {}", out.display());
    Ok(())
}

pub fn cmd_echo_config(args: &ConfigArgs, data_root: Option<&Path>) -> Result<()> {
    let cfg = load_config(args, data_root)?;
    print!("{}", cfg.to_toml()?);
    Ok(())
}
