//! The `run` command: config in, manifest and results out.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::{ConfigError, RunConfig};
use crate::experiments::{prepare, RunError};
use crate::io::{trace_csv, write_atomic, write_json_atomic};

pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.json";
pub const TRACE: &str = "trace.csv";
pub const ERROR: &str = "error.json";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config_path: PathBuf,
    /// Overrides `output_dir` from the config.
    pub output: Option<PathBuf>,
    pub seed_override: Option<u64>,
    pub threads: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("run failed: {0}")]
    Run(#[from] RunError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Run(_) => 2,
            CliError::Io { .. } => 1,
        }
    }
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads and validates a config, applying the command-line overrides.
pub fn load_config(opts: &RunOptions) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(&opts.config_path)
        .map_err(|e| ConfigError::new(format!("{}: {e}", opts.config_path.display())))?;
    let mut config = RunConfig::from_json(&text)?;
    if let Some(seed) = opts.seed_override {
        config.seed = seed;
    }
    if let Some(dir) = &opts.output {
        config.output_dir = Some(dir.clone());
    }
    if config.output_dir.is_none() {
        return Err(ConfigError::new(
            "no output directory: set output_dir or pass --output",
        ));
    }
    Ok(config)
}

pub fn manifest(config: &RunConfig) -> serde_json::Value {
    json!({
        "tool": crate::TOOL_NAME,
        "version": env!("CARGO_PKG_VERSION"),
        "git": env!("GIBBS_DIAG_GIT_VERSION"),
        "seed": config.seed,
        "config": config,
    })
}

/// Files a previous run may have left that this run would replace.
fn is_stale_output(name: &str) -> bool {
    let name = name.strip_suffix(".tmp").unwrap_or(name);
    [REPORT, TRACE, ERROR].contains(&name) || name.ends_with(".svg")
}

fn clear_previous(dir: &Path) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() && entry.file_name().to_str().is_some_and(is_stale_output) {
            fs::remove_file(entry.path())?;
        }
    }
    Ok(())
}

/// Runs one experiment and returns the output directory.
///
/// Nothing is written until the config has been fully validated. A failed
/// chain leaves `manifest.json` and `error.json` only.
pub fn run(opts: &RunOptions) -> Result<PathBuf, CliError> {
    let config = load_config(opts)?;
    let prepared = prepare(&config)?;
    let dir = config.output_dir.clone().expect("checked in load_config");
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    clear_previous(&dir).map_err(io_at(&dir))?;
    let path = dir.join(MANIFEST);
    write_json_atomic(&path, &manifest(&config)).map_err(io_at(&path))?;

    let outcome = match prepared.execute(opts.threads) {
        Ok(o) => o,
        Err(e) => {
            let path = dir.join(ERROR);
            write_json_atomic(&path, &e.to_json()).map_err(io_at(&path))?;
            return Err(e.into());
        }
    };
    if let Some(trace) = &outcome.trace {
        let path = dir.join(TRACE);
        write_atomic(&path, trace_csv(trace).as_bytes()).map_err(io_at(&path))?;
    }
    for (name, contents) in &outcome.figures {
        let path = dir.join(name);
        write_atomic(&path, contents.as_bytes()).map_err(io_at(&path))?;
    }
    let path = dir.join(REPORT);
    write_json_atomic(&path, &outcome.report).map_err(io_at(&path))?;
    Ok(dir)
}
