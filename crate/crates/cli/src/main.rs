//! `langneuron`: corpus generation, toy-model training and alignment,
//! activation collection, neuron identification, ablation and reports.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "langneuron", version, about = "Language-neuron identification toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random stream; overrides seeds in --config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic corpus operations.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
    /// Train a toy model on the train split of a corpus.
    Train(TrainArgs),
    /// DPO fine-tune a model on sampled preference pairs.
    Align(AlignArgs),
    /// Collect activation probabilities into a NAPS snapshot.
    Collect(CollectArgs),
    /// Score, select and label neurons of a snapshot.
    Identify(IdentifyArgs),
    /// Perplexity ablation matrix for one mask scope.
    Ablate(AblateArgs),
    /// Aggregate reports over a classification or PPL table.
    Report {
        #[command(subcommand)]
        kind: ReportKind,
    },
    /// Base-versus-aligned label count deltas.
    Diff(DiffArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusAction {
    /// Generate train, eval and probe splits.
    Gen {
        #[arg(long, value_enum, default_value_t = Preset::Default)]
        preset: Preset,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// 10 languages.
    Default,
    /// 4 languages.
    Ablation,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus JSON-lines file.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus configuration written by `corpus gen`.
    #[arg(long)]
    pub corpus_config: PathBuf,
    /// Preference pairs per non-pivot language.
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Output file name inside --out.
    #[arg(long, default_value = "snapshot.naps")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub pct: Option<f64>,
    /// Output file name inside --out.
    #[arg(long, default_value = "classification.json")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub classification: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "probe")]
    pub split: String,
    /// specific | language | agnostic
    #[arg(long)]
    pub scope: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum ReportKind {
    /// Per-layer label counts.
    Layers(ClassificationArg),
    /// Labelled neurons by number of active languages.
    Shared(ClassificationArg),
    /// Specific and related counts per language.
    Counts(ClassificationArg),
    /// Directional overlap of two classifications' language neurons.
    Overlap(OverlapArgs),
    /// Four-stage layer segmentation.
    Stages(ClassificationArg),
    /// SVG heatmap of a PPL ratio table.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args)]
pub struct ClassificationArg {
    #[arg(long)]
    pub classification: PathBuf,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Which set is the denominator: a | b
    #[arg(long, default_value = "a")]
    pub fiducial: String,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// CSV written by `ablate`.
    #[arg(long)]
    pub ppl: PathBuf,
    #[arg(long, default_value = "PPL ratio (masked / base)")]
    pub title: String,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub aligned: PathBuf,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("LN_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    commands::dispatch(&cli.common, &cli.command)
}
