//! `symgan`: train, evaluate and report on bi-directional adversarial domain
//! adaptation runs.
//!
//! Exit status is 0 on success, 1 for configuration or usage errors and 2
//! for failures while running.

mod commands;
mod render;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use symgan_core::metrics::SWEEP_VALUES;

#[derive(Parser, Debug)]
#[command(name = "symgan", version, about = "Symmetric bi-directional adversarial domain adaptation")]
struct Cli {
    /// Root of the raw dataset files (overrides the config and $SYMGAN_DATA).
    #[arg(long, global = true, value_name = "DIR")]
    data_root: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

/// Configuration sources, lowest precedence first: preset, `--config` file,
/// `--set` overrides, then the dedicated flags.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Base preset: default or desk.
    #[arg(long, default_value = "default")]
    pub preset: String,
    /// Override one key, e.g. `--set loss_weights.eta=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Adaptation setting, e.g. mnist->usps or synthetic.
    #[arg(long)]
    pub setting: Option<String>,
    /// Number of epochs. The self-labeling start epoch is scaled along
    /// unless it is set explicitly.
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Options shared by the commands that inspect a trained model.
#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Checkpoint directory, or a run directory (its latest checkpoint).
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    /// Config overrides applied on top of the checkpoint's config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (default: `<checkpoint>/report`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Images drawn from each domain.
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    /// Image pairs per class for the SSIM averages.
    #[arg(long, default_value_t = 1000)]
    pub pairs: usize,
    /// PCA components kept before t-SNE.
    #[arg(long, default_value_t = 64)]
    pub pca: usize,
    /// Seed of the embedding.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoints, metrics and a summary.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from the latest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Accuracy of a checkpoint on the target test split.
    Evaluate {
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Also write summary.txt and summary.json here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Write per-image ensemble predictions as JSON lines.
        #[arg(long, value_name = "FILE")]
        predictions: Option<PathBuf>,
    },
    /// Train the cumulative loss-term ablation rows.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Vary the classification and consistency weights one at a time.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Intra-class SSIM of real and translated images.
    SsimReport(ReportArgs),
    /// 2-D t-SNE embedding of source, target and translated images.
    Embed(ReportArgs),
    /// Image grids, SSIM table and embedding for a checkpoint.
    Report(ReportArgs),
    /// Print the fully resolved configuration as TOML.
    EchoConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| matches!(c.downcast_ref::<symgan_core::Error>(), Some(symgan_core::Error::Config(_))))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let root = cli.data_root.as_deref();
    match cli.command {
        Command::Train { cfg, resume } => commands::cmd_train(&cfg, root, resume),
        Command::Evaluate { checkpoint, set, out, predictions } => {
            commands::cmd_evaluate(&checkpoint, &set, root, out.as_deref(), predictions.as_deref())
        }
        Command::Ablate { cfg, seeds } => commands::cmd_ablate(&cfg, root, &seeds),
        Command::Sweep { cfg, seeds, values } => {
            commands::cmd_sweep(&cfg, root, &seeds, values.as_deref().unwrap_or(&SWEEP_VALUES))
        }
        Command::SsimReport(a) => commands::cmd_ssim_report(&a, root),
        Command::Embed(a) => commands::cmd_embed(&a, root),
        Command::Report(a) => commands::cmd_report(&a, root),
        Command::EchoConfig { cfg } => commands::cmd_echo_config(&cfg, root),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp_secs().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 1 } else { 2 })
        }
    }
}
