//! `alight` — one binary for the whole pipeline: build the albedo model,
//! generate a tone-balanced benchmark, fit scenes, validate gradients,
//! and score predictions.
//!
//! Exit codes: 0 success, 2 usage or input error (clap reports its own
//! parse failures with 2 as well), 3 runtime failure.

mod commands;
mod gradcheck;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub(crate) const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Directory for default asset locations (the albedo model); overridden by
/// the `ALIGHT_ASSET_DIR` environment variable.
pub(crate) fn asset_dir() -> PathBuf {
    std::env::var_os("ALIGHT_ASSET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("assets"))
}

pub(crate) fn default_model_path() -> PathBuf {
    asset_dir().join("model.alight")
}

/// The type anchors live next to the model file.
pub(crate) fn anchors_path(model: &Path) -> PathBuf {
    model.with_extension("anchors.json")
}

#[derive(Debug)]
pub(crate) enum Failure {
    /// Bad or missing input; exit code 2.
    Input(String),
    /// Work started and failed; exit code 3.
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<alight_core::Error> for Failure {
    fn from(e: alight_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub(crate) type CmdResult = Result<(), Failure>;

pub(crate) fn require_dir(path: &Path, what: &str) -> CmdResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::Input(format!(
            "{what} directory not found: {}",
            path.display()
        )))
    }
}

pub(crate) fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Input(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}

/// Provenance record written into every output directory. Deliberately
/// excludes `--jobs`: parallelism must not change any output byte.
pub(crate) fn write_run_json(
    dir: &Path,
    subcommand: &str,
    seed: Option<u64>,
    config: serde_json::Value,
) -> CmdResult {
    let run = serde_json::json!({
        "version": VERSION,
        "subcommand": subcommand,
        "seed": seed,
        "config": config,
    });
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("run.json"), serde_json::to_vec_pretty(&run)?)?;
    Ok(())
}

#[derive(Parser)]
#[command(
    name = "alight",
    version,
    about = "Disentangle facial albedo from spherical-harmonic lighting and benchmark it evenly across skin types"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the PCA albedo model from the procedural library or a texture directory.
    BuildModel(commands::BuildModelArgs),
    /// Generate a skin-type-balanced synthetic dataset.
    Generate(commands::GenerateArgs),
    /// Fit albedo and lighting to every scene of a dataset.
    Fit(commands::FitArgs),
    /// Score predicted albedo maps against dataset ground truth.
    Evaluate(commands::EvaluateArgs),
    /// Validate every analytic gradient against central finite differences.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Fit the {none, +sc, +cond, +both} arms unsupervised and compare scores.
    Ablate(commands::AblateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::BuildModel(a) => commands::build_model(&a),
        Cmd::Generate(a) => commands::generate(&a),
        Cmd::Fit(a) => commands::fit(&a),
        Cmd::Evaluate(a) => commands::evaluate(&a),
        Cmd::Gradcheck(a) => gradcheck::run(&a),
        Cmd::Ablate(a) => commands::ablate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
