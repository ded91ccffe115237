//! Command-line harness and HTTP service around `relplace-core`.

pub mod args;
pub mod config;
pub mod error;
pub mod eval;
pub mod gen;
pub mod runlog;
pub mod service;
pub mod train;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};
use serde_json::json;

use relplace_core::scenes::Dataset;

use crate::args::{Cli, Command};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::runlog::{fingerprint, RunLog};

pub const THREADS_ENV: &str = "RELPLACE_THREADS";

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 2,
                _ => {
                    eprintln!("{}", CliError::usage(e.kind().to_string()).to_json());
                    2
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            if let CliError::Usage(_) = e {
                eprintln!("{}", Cli::command().render_usage());
            }
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Gen(a) => gen::run(&a),
        Command::TrainRelnet(a) => train::run_relnet(&a),
        Command::TrainSpatial(a) => train::run_spatial(&a),
        Command::Eval(a) => eval::run(&a),
        Command::Serve(a) => service::run(&a),
    }
}

/// Applies `RELPLACE_THREADS` to the global worker pool (once per process).
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A pool that already exists (repeated in-process runs) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Loads the config file, applies flag overrides and validates.
pub(crate) fn resolve_config(
    file: Option<&Path>,
    apply: impl FnOnce(&mut ExperimentConfig),
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(file)?;
    apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Creates the output directory with its fixed layout and writes the config snapshot.
pub(crate) fn prepare_out(out: Option<&PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let out = out.ok_or_else(|| CliError::usage("--out is required"))?.clone();
    for dir in [out.clone(), out.join("checkpoints"), out.join("heatmaps")] {
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    let path = out.join("config.json");
    std::fs::write(&path, cfg.to_json())
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(out)
}

pub(crate) fn start_log(
    out: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    no_timestamps: bool,
) -> Result<RunLog, CliError> {
    let mut log = RunLog::open(out, !no_timestamps)?;
    log.event(
        "start",
        json!({
            "command": command,
            "fingerprint": fingerprint(),
            "config": serde_json::to_value(cfg).expect("config serializes"),
        }),
    )?;
    Ok(log)
}

pub(crate) fn require_path(value: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    value.clone().ok_or_else(|| CliError::usage(format!("{flag} is required")))
}

pub(crate) fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    if !dir.join("manifest.jsonl").exists() {
        return Err(CliError::runtime(format!("no dataset at {} (manifest.jsonl missing)", dir.display())));
    }
    Dataset::load(dir).map_err(|e| CliError::runtime(format!("cannot load dataset {}: {e}", dir.display())))
}
