//! `crosscon`: generate synthetic data, pre-train, fine-tune, evaluate,
//! ablate and export.
//!
//! Settings resolve in this order, later winning: built-in defaults, the
//! `--config` file, command-line flags.

mod commands;
mod datadir;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "crosscon",
    version,
    about = "Tri-modal cross-contrastive pre-training on geo-temporal species data"
)]
struct Cli {
    /// Root under which runs without --out are placed.
    #[arg(long, global = true, env = "CROSSCON_OUT", default_value = "runs")]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sister-species dataset (train.csv, test.csv, manifest.json).
    GenData(GenDataArgs),
    /// Pre-train the three encoders with the cross-contrastive objective.
    Pretrain(PretrainArgs),
    /// Fit the classification head on top of pre-trained encoders.
    Finetune(FinetuneArgs),
    /// Evaluate a fine-tuned classifier on the test split.
    Eval(EvalArgs),
    /// Pre-train and fine-tune every ablation variant for every seed.
    Ablate(AblateArgs),
    /// Probability of one class over a lat/lon grid for a fixed image and date.
    Heatmap(HeatmapArgs),
    /// Metadata-encoder embedding of every grid cell.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args, Clone)]
pub struct Common {
    /// Run configuration (TOML with data/encoders/loss/training/evaluation sections).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: <out-root>/<command>-<timestamp>]. Must be absent or empty.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    F64,
    F32,
}

/// Overrides for the training section of the config.
#[derive(Args, Clone, Default)]
pub struct TrainFlags {
    /// Run seed; mandatory unless the config sets `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    /// Fixed softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Also train the image and metadata encoders during fine-tuning.
    #[arg(long)]
    pub unfreeze: bool,
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Species file (TOML); the built-in 12-class set when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Samples per class in each split.
    #[arg(long, default_value_t = 80)]
    pub n_per_class: usize,
    /// Output directory [default: <out-root>/data-<seed>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory written by gen-data (or any directory with train.csv and test.csv).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Encoder checkpoint written by pretrain.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Classifier checkpoint written by finetune.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated seeds (overrides evaluation.seeds).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated variants: full, two_term, drop_image_meta, drop_text_meta, no_pretrain, image_only.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory; the fixed image is the mean training image of the class.
    #[arg(long)]
    pub data: PathBuf,
    /// Classifier checkpoint written by finetune.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Class to map (overrides evaluation.heatmap_class).
    #[arg(long)]
    pub class: Option<usize>,
    /// Day of year (overrides evaluation.day_of_year).
    #[arg(long)]
    pub day: Option<u16>,
}

#[derive(Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Encoder or classifier checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Day of year (overrides evaluation.day_of_year).
    #[arg(long)]
    pub day: Option<u16>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&cli.out_root, a),
        Command::Pretrain(a) => commands::pretrain(&cli.out_root, a),
        Command::Finetune(a) => commands::finetune(&cli.out_root, a),
        Command::Eval(a) => commands::eval(&cli.out_root, a),
        Command::Ablate(a) => commands::ablate(&cli.out_root, a),
        Command::Heatmap(a) => commands::heatmap(&cli.out_root, a),
        Command::ExportEmbeddings(a) => commands::export_embeddings(&cli.out_root, a),
    };
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
