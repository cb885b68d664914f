//! `vit-hgr`: synthetic data, import, preprocessing, cross-validated training,
//! baseline comparison and report rendering.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vit_hgr::vit::ModelId;

use config::Overrides;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or inputs; nothing was computed.
    Usage(String),
    Runtime(vit_hgr::Error),
}

impl From<vit_hgr::Error> for CliError {
    fn from(e: vit_hgr::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "vit-hgr", version, about = "HD-sEMG gesture recognition with a vision transformer and an LDA baseline")]
struct Cli {
    /// Run configuration JSON; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Folds trained concurrently.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (output file for synth and import).
    #[arg(short = 'o', long = "output", global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset container.
    Synth(SynthArgs),
    /// Convert a directory of per-recording CSV files into a dataset container.
    Import(ImportArgs),
    /// Preprocess and window a dataset, writing baseline features.
    Preprocess(DataArgs),
    /// Repetition-wise cross-validation of the transformer.
    Train(TrainArgs),
    /// Transformer and LDA on identical folds and windows.
    Compare(TrainArgs),
    /// Print a report.json or compare.json as a table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    subjects: Option<u32>,
    #[arg(long)]
    gestures: Option<u32>,
    #[arg(long)]
    reps: Option<u32>,
    /// Recording length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    separation: Option<f64>,
}

#[derive(Args, Debug)]
struct ImportArgs {
    /// Directory of CSV files.
    #[arg(long)]
    dir: PathBuf,
    /// Mapping JSON (filename_pattern, grid_rows, grid_cols, sample_rate_hz, ...).
    #[arg(long)]
    mapping: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset container.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model preset: I, II or III.
    #[arg(long)]
    model: Option<ModelId>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Train and test on a seeded permutation of the labels.
    #[arg(long)]
    shuffle_labels: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run directory, report.json or compare.json.
    input: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = Overrides {
        seed: cli.seed,
        jobs: cli.jobs,
        output: cli.output,
        ..Overrides::default()
    };
    match cli.command {
        Command::Synth(a) => {
            let mut c = config::RunConfig::load(cli.config.as_deref(), &overrides)?;
            let s = &mut c.synthetic;
            if let Some(v) = a.subjects {
                s.num_subjects = v;
            }
            if let Some(v) = a.gestures {
                s.num_gestures = v;
            }
            if let Some(v) = a.reps {
                s.num_repetitions = v;
            }
            if let Some(v) = a.duration {
                s.duration_s = v;
            }
            if let Some(v) = a.noise {
                s.noise_sigma = v;
            }
            if let Some(v) = a.separation {
                s.separation = v;
            }
            commands::synth(&c)
        }
        Command::Import(a) => {
            let c = config::RunConfig::load(cli.config.as_deref(), &overrides)?;
            commands::import(&c, &a.dir, &a.mapping)
        }
        Command::Preprocess(a) => {
            overrides.data = a.data;
            let c = config::RunConfig::load(cli.config.as_deref(), &overrides)?;
            commands::preprocess(&c)
        }
        Command::Train(a) => commands::train(&training_config(cli.config, overrides, a)?),
        Command::Compare(a) => commands::compare(&training_config(cli.config, overrides, a)?),
        Command::Report(a) => commands::report(&a.input, overrides.output.as_deref()),
    }
}

fn training_config(
    path: Option<PathBuf>,
    mut overrides: Overrides,
    a: TrainArgs,
) -> Result<config::RunConfig, CliError> {
    overrides.data = a.data.data;
    overrides.model = a.model;
    let mut c = config::RunConfig::load(path.as_deref(), &overrides)?;
    if let Some(v) = a.epochs {
        c.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        c.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        c.train.learning_rate = v;
    }
    c.shuffle_labels |= a.shuffle_labels;
    Ok(c)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
