//! Experiment runner for `fp8emu`: INI experiment configs, run artifacts,
//! preset sweeps and tensor-file quantization.

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use fp8emu::harness::HarnessError;
use thiserror::Error;

pub mod config;
pub mod ini;
pub mod presets;
pub mod quantize;
pub mod run;

pub use config::ExperimentConfig;
pub use presets::{Preset, SweepReport};
pub use run::{run_experiment, RunSummary};

/// Overrides every output directory (config files and sweep defaults).
pub const OUT_DIR_ENV: &str = "FP8EMU_OUT_DIR";

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const DIVERGED: u8 = 2;
    /// Malformed or inconsistent configuration, bad command-line values.
    pub const CONFIG: u8 = 64;
    /// Input file exists but its contents are garbled.
    pub const DATA: u8 = 65;
    /// Dataset or input tensor file does not exist.
    pub const NO_INPUT: u8 = 66;
    /// Any other read or write failure, e.g. an unwritable output directory.
    pub const IO: u8 = 74;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }

    pub fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("bad input data: {0}")]
    Data(String),
    #[error("input not found: {}", .path.display())]
    MissingInput { path: PathBuf },
    #[error("I/O error on {}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Data(_) => exit::DATA,
            CliError::MissingInput { .. } => exit::NO_INPUT,
            CliError::Io { .. } => exit::IO,
            CliError::Diverged(_) => exit::DIVERGED,
        }
    }

    fn from_harness(e: HarnessError, path: &Path) -> Self {
        match e {
            HarnessError::Data(m) => CliError::Data(m),
            HarnessError::Quant(q) => CliError::Data(q.to_string()),
            HarnessError::Io(source) => CliError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => CliError::Config(ConfigError::new(other.to_string())),
        }
    }
}

/// Read a whole input file; a missing file is distinguished from other
/// failures.
pub fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| match source.kind() {
        io::ErrorKind::NotFound => CliError::MissingInput {
            path: path.to_path_buf(),
        },
        _ => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
    })
}

pub fn write_output(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
