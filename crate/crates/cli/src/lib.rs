//! `artifact` command line: one subcommand per pipeline step.
//!
//! Exit codes: 0 success, 1 usage, contract or validation error, 2 I/O error.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

pub use config::{CliConfig, Setting, Source};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration.
    Usage(String),
    /// Contract or validation failure reported by a pipeline module.
    Invalid(String),
    Io(String),
    /// `--help` or `--version` output, not a failure.
    Info(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => 0,
            CliError::Usage(_) | CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Invalid(m) | CliError::Io(m) | CliError::Info(m) => f.write_str(m),
        }
    }
}

impl From<clap::Error> for CliError {
    fn from(e: clap::Error) -> Self {
        use clap::error::ErrorKind::*;
        let text = e.render().to_string();
        match e.kind() {
            DisplayHelp | DisplayVersion => CliError::Info(text),
            _ => CliError::Usage(text),
        }
    }
}

impl From<artifact_core::Error> for CliError {
    fn from(e: artifact_core::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

impl From<artifact_annotate::AnnotateError> for CliError {
    fn from(e: artifact_annotate::AnnotateError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "artifact", version, about = "Visual-artifact detection pipeline for AI-generated video frames")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every random choice (each subcommand has its own default).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file whose values apply where no flag is given.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory (a file for `split`).
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Print effective settings and their provenance; log progress.
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample frames from clips at a fixed rate into a new manifest.
    Extract(commands::ExtractArgs),
    /// Generate labeled synthetic frames with ground-truth masks.
    Synth(commands::SynthArgs),
    /// Assign labeled frames to TRAIN and VAL.
    Split(commands::SplitArgs),
    /// Per-label frequency table.
    Stats(commands::StatsArgs),
    /// Train a multi-label classifier.
    Train(commands::TrainArgs),
    /// Score a checkpoint on a split.
    Eval(commands::EvalArgs),
    /// Build the results table from metrics files.
    Report(commands::ReportArgs),
    /// Grad-CAM overlays for one image.
    Gradcam(commands::GradcamArgs),
    /// Overlap between a Grad-CAM heatmap and a human-drawn region.
    Agreement(commands::AgreementArgs),
    /// Run the annotation HTTP service.
    Serve(commands::ServeArgs),
}

/// Parses flags over config over defaults.
pub fn parse<I, T>(argv: I) -> Result<(Cli, CliConfig), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let (matches, cfg) = config::layered_matches(Cli::command(), &argv)?;
    let cli = Cli::from_arg_matches(&matches)?;
    Ok((cli, cfg))
}

/// Runs one invocation, writing human output to `out` and diagnostics to
/// `err`. Returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let result = parse(argv).and_then(|(cli, cfg)| {
        if cli.global.verbose {
            let _ = write!(err, "{}", cfg.render());
        }
        commands::dispatch(&cli, out)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Info(text) => {
                    let _ = write!(out, "{text}");
                }
                other => {
                    let _ = writeln!(err, "error: {}", other.to_string().trim_start_matches("error: ").trim_end());
                }
            }
            e.exit_code()
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}
