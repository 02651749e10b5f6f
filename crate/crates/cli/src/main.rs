//! `medcode` command-line front end. Every subcommand reads one JSON
//! experiment config; `--section.field=value` arguments override fields.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(medcode::Error),
}

impl From<medcode::Error> for CliError {
    fn from(e: medcode::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numeric() => 4,
            CliError::Core(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "medcode", version, about = "Medical coding experiment pipeline")]
struct Cli {
    /// Worker threads; 1 keeps execution single-threaded.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (JSON).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (and code system) to the configured paths.
    Synth(ConfigArg),
    /// Summarize the corpus before and after preprocessing.
    Stats(ConfigArg),
    /// Filter rare codes, split by patient with stratification and audit the result.
    Split(ConfigArg),
    /// Train a model and score the validation and test documents.
    Train(ConfigArg),
    /// Sweep decision boundaries on validation predictions.
    Tune {
        #[command(flatten)]
        config: ConfigArg,
        /// Predictions to tune on (default: preds_val.json in the output dir).
        #[arg(long)]
        preds: Option<PathBuf>,
    },
    /// Compute every metric for a prediction file.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        /// Predictions to score (default: preds_test.json in the output dir).
        #[arg(long)]
        preds: Option<PathBuf>,
        #[arg(long)]
        boundary: Option<f64>,
        /// arithmetic or harmonic (harmonic mean of macro precision and recall).
        #[arg(long = "macro")]
        macro_formula: Option<String>,
        /// ignore or zero_fill.
        #[arg(long)]
        missing_class: Option<String>,
    },
    /// Error analyses.
    Analyze {
        #[command(subcommand)]
        kind: AnalyzeKind,
    },
}

#[derive(Subcommand)]
enum AnalyzeKind {
    /// Frequency and length correlations, never-predicted codes, chapters.
    Errors {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        preds: Option<PathBuf>,
    },
    /// Pairwise McNemar tests with Bonferroni correction.
    Mcnemar {
        #[command(flatten)]
        config: ConfigArg,
        /// Two or more prediction files over the same documents and codes.
        #[arg(long, num_args = 2.., required = true)]
        preds: Vec<PathBuf>,
    },
    /// Retrain on stratified subsets of increasing size.
    SizeCurve(ConfigArg),
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let load = |c: &ConfigArg| config::load(&c.config, overrides);
    match cli.command {
        Command::Synth(c) => commands::synth(&load(&c)?),
        Command::Stats(c) => commands::stats(&load(&c)?),
        Command::Split(c) => commands::split(&load(&c)?),
        Command::Train(c) => commands::train(&load(&c)?),
        Command::Tune { config, preds } => commands::tune(&load(&config)?, preds),
        Command::Evaluate {
            config,
            preds,
            boundary,
            macro_formula,
            missing_class,
        } => {
            let mut loaded = load(&config)?;
            commands::apply_policy_flags(&mut loaded, boundary, macro_formula, missing_class)?;
            commands::evaluate(&loaded, preds)
        }
        Command::Analyze { kind } => match kind {
            AnalyzeKind::Errors { config, preds } => commands::analyze_errors(&load(&config)?, preds),
            AnalyzeKind::Mcnemar { config, preds } => commands::analyze_mcnemar(&load(&config)?, &preds),
            AnalyzeKind::SizeCurve(c) => commands::analyze_size_curve(&load(&c)?),
        },
    }
}

fn main() -> ExitCode {
    let (args, overrides) = config::extract_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("medcode: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
