//! Command-line front end: `generate | mine | train | eval | sweep | replay`.
//!
//! Every run writes a manifest with the fully resolved configuration next to
//! its outputs; `replay` re-executes a manifest and reproduces the outputs
//! byte for byte, at any thread count.

pub mod config;
mod manifest;
mod run;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
pub use manifest::{Invocation, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::IoFailure(_) | Error::MalformedHeader(_) | Error::TruncatedPayload { .. } | Error::Csv { .. } => {
                EXIT_IO
            }
            Error::DimensionMismatch(_)
            | Error::InvalidConfig(_)
            | Error::MissingLabels
            | Error::AnchorNotMined(_) => EXIT_USAGE,
            Error::NonFiniteValue { .. }
            | Error::ZeroVector(_)
            | Error::EmptyPositiveSet
            | Error::CriterionInversion { .. }
            | Error::NonFinite(_)
            | Error::Diverged { .. }
            | Error::Anchor { .. } => EXIT_NUMERIC,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ppap", version, about = "Positive/ambiguous/negative pair mining for contrastive learning")]
pub struct Cli {
    /// Worker threads (default: PPAP_THREADS, then available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Layering {
    /// TOML file with flat key = value settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a setting, e.g. `--set phi0=0.6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a labeled mixture on the unit sphere into a feature container.
    Generate {
        /// Mixture spec (TOML): either `preset`/`seed` or dim, count, seed, components.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// two-clusters, overlap8 or long-tail.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// f32 or f64 storage.
        #[arg(long)]
        precision: Option<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine positive and ambiguous sets for every row of a feature file.
    Mine {
        /// Feature container or CSV.
        #[arg(long)]
        features: PathBuf,
        /// ppap, knn or kmeans.
        #[arg(long)]
        strategy: Option<String>,
        #[command(flatten)]
        layering: Layering,
        /// Result file; `.json` selects JSON, anything else the binary form.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a linear projection against the contrastive loss of a mining result.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        mining: PathBuf,
        #[arg(long)]
        epochs: Option<u64>,
        #[command(flatten)]
        layering: Layering,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trust, curve, frequency-band and clustering reports.
    Eval {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        mining: Option<PathBuf>,
        #[arg(long)]
        trust: bool,
        #[arg(long)]
        curve: bool,
        #[arg(long)]
        cluster: bool,
        #[arg(long)]
        bands: bool,
        /// Projection weights from `train`; clustering then runs on projected features.
        #[arg(long)]
        projection: Option<PathBuf>,
        #[command(flatten)]
        layering: Layering,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine (and optionally train) over a grid of configurations.
    Sweep {
        #[arg(long)]
        features: PathBuf,
        /// Base mining config.
        #[arg(long)]
        base: Option<PathBuf>,
        /// Sweep spec: `[grid]` of field = [values] or `points = [{...}]`.
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a manifest, optionally writing to a different output path.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run::execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
