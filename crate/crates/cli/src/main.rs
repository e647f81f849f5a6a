//! `vocspec`: corpus generation, training, augmentation sweeps, generation,
//! evaluation, saliency and model comparison.

mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::{usage, CliError};

#[derive(Parser, Debug)]
#[command(name = "vocspec", version, about = "VOC identification and quantification from IR spectra")]
pub struct Cli {
    /// Master seed for every random stream. Required.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic spectra corpus and its recipe.
    GenData(GenData),
    /// Convert raw instrument measurements into a spectra CSV.
    Ingest(Ingest),
    /// Train five fold-rotated models.
    Train(Train),
    /// Sweep augmentation sizes and keep the best five fold models.
    AugmentSweep(AugmentSweep),
    /// Generate spectra with a trained CVAE.
    Generate(Generate),
    /// Evaluate discriminator checkpoints on a spectra CSV.
    Evaluate(Evaluate),
    /// Abs-CAM saliency map for one spectrum.
    Saliency(SaliencyArgs),
    /// Kruskal-Wallis and Dunn comparison of evaluation reports.
    Compare(Compare),
}

#[derive(Args, Debug)]
pub struct GenData {
    /// `balanced` or `starved`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Spectra per class for the balanced preset.
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Size of the largest class for the starved preset.
    #[arg(long)]
    pub max_count: Option<usize>,
    /// Output spectra CSV; the recipe goes next to it as `<stem>.recipe.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Ingest {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaporation chamber volume in litres.
    #[arg(long)]
    pub chamber_volume: Option<f64>,
    /// Gas cell volume in litres.
    #[arg(long)]
    pub cell_volume: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Args, Debug)]
pub struct Train {
    /// `basic` (discriminator) or `cvae`.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct AugmentSweep {
    /// `oversample` or `synthetic`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory of per-fold CVAE checkpoints from `train --model cvae`.
    #[arg(long)]
    pub cvae_dir: Option<PathBuf>,
    /// Comma-separated per-class counts; defaults to the full grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct Generate {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub class: Option<String>,
    /// Requested concentration in ppm.
    #[arg(long)]
    pub concentration: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Evaluate {
    /// Discriminator checkpoints; one report fold per checkpoint.
    #[arg(long, num_args = 1..)]
    pub checkpoints: Option<Vec<PathBuf>>,
    /// Alternative to `--checkpoints`: every `fold*.ckpt` in a directory.
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Zero-based row of the spectrum in `--data`.
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Compare {
    /// Evaluation `report.json` files, at least two.
    #[arg(long, num_args = 1..)]
    pub reports: Option<Vec<PathBuf>>,
    /// Display names, one per report.
    #[arg(long, num_args = 1..)]
    pub names: Option<Vec<String>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// `none`, `bonferroni` or `holm`.
    #[arg(long)]
    pub adjustment: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.seed {
        None => Err(usage("--seed is required: every run must name its seed")),
        Some(seed) => commands::run(&cli.command, seed, cli.config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `vocspec --help` for usage");
            }
            e.exit_code()
        }
    }
}
