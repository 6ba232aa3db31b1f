//! Command-line surface for the architecture-search engine.

// Validation deliberately uses negated comparisons (`!(x > 0.0)`) so NaN
// inputs fail closed.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod dataset;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "edgenas",
    version,
    about = "Hardware-aware architecture search for graph neural networks"
)]
pub struct Cli {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override the seed the command would read from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Machine-readable JSON on stdout instead of the human report.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Sample, canonicalize and label architectures into a JSONL dataset.
    GenDataset {
        #[arg(long)]
        count: usize,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Train a latency or peak-memory predictor on a dataset.
    TrainPredictor {
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Metric to fit; defaults to the [train] section.
        #[arg(long, value_enum)]
        target: Option<TargetArg>,
        /// Train on a single device's labels instead of all of them.
        #[arg(long)]
        device: Option<String>,
        /// Initialize from previously trained weights.
        #[arg(long, value_name = "WEIGHTS")]
        warm_start: Option<PathBuf>,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Report MAPE and within-bound fractions on a dataset split.
    EvalPredictor {
        #[arg(long, value_name = "PATH")]
        weights: PathBuf,
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        /// Comma-separated relative error bounds.
        #[arg(long, value_delimiter = ',')]
        bounds: Option<Vec<f64>>,
    },
    /// Predict a genotype's metric with trained weights.
    Predict {
        #[arg(long, value_name = "PATH")]
        weights: PathBuf,
        #[command(flatten)]
        genotype: GenotypeSource,
        #[arg(long)]
        device: String,
        #[command(flatten)]
        stats: StatsArgs,
    },
    /// Closed-form peak-memory trace of a genotype.
    EstimateMem {
        #[command(flatten)]
        genotype: GenotypeSource,
        #[command(flatten)]
        stats: StatsArgs,
    },
    /// Run the two-stage constrained search from the configuration.
    Search {
        /// Also write the result JSON to this path.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Pearson correlation matrix across the dataset's metric columns.
    AnalyzeCorrelation {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Identify an artifact, verify its provenance and summarize it.
    Inspect {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[command(flatten)]
        stats: StatsArgs,
    },
    /// Emit the DGCNN backbone genotype as single-line JSON.
    PresetExport {
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

/// A genotype argument: a JSON file or a named preset.
#[derive(Args)]
pub struct GenotypeSource {
    /// Path to a genotype JSON file.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub genotype: Option<PathBuf>,
    /// Built-in preset name (currently `dgcnn`).
    #[arg(long)]
    pub preset: Option<String>,
}

/// Graph-statistics overrides on top of the configuration's [stats] section.
#[derive(Args, Clone, Copy, Default)]
pub struct StatsArgs {
    /// Number of points N.
    #[arg(long)]
    pub points: Option<usize>,
    /// Neighbors per node K.
    #[arg(long)]
    pub k: Option<usize>,
    /// Input feature length.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Bytes per weight element.
    #[arg(long)]
    pub weight_precision: Option<u32>,
    /// Bytes per edge-index element.
    #[arg(long)]
    pub index_precision: Option<u32>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Latency,
    PeakMemory,
}

impl From<TargetArg> for edgenas::predictor::TargetMetric {
    fn from(value: TargetArg) -> Self {
        match value {
            TargetArg::Latency => edgenas::predictor::TargetMetric::Latency,
            TargetArg::PeakMemory => edgenas::predictor::TargetMetric::PeakMemory,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    All,
}

/// Parse and run; exit status 0 on success, 1 on domain errors, 2 on usage
/// errors. Diagnostics go to stderr, machine output to stdout.
pub fn cli_dispatch<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    0
                }
                _ => {
                    eprint!("{err}");
                    2
                }
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}
