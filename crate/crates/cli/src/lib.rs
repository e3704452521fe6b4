//! Command implementations behind the `se2p` binary.

use std::fmt;
use std::path::{Path, PathBuf};

pub mod commands;
pub mod config;

pub use commands::{cmd_bench, cmd_params, cmd_preprocess, cmd_train, cmd_wl_demo};
pub use config::{resolve, ResolvedConfig, RunConfigFile};

pub const DATA_DIR_ENV: &str = "SE2P_DATA_DIR";

/// Failure categories with their process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Bad flags, config values or paths.
    Config = 2,
    /// Malformed dataset or cache contents.
    Data = 3,
    /// A library invariant was violated.
    Internal = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        Self {
            kind: ExitKind::Config,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn internal(err: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ExitKind::Internal,
            error: err.into(),
        }
    }

    pub fn from_core(err: se2p::Error) -> Self {
        use se2p::Error as E;
        let kind = match &err {
            E::MissingFile(_) | E::Io { .. } | E::InvalidParam(_) | E::Config(_) | E::StageMismatch { .. } => {
                ExitKind::Config
            }
            E::Format { .. } | E::EmptyDataset | E::Corrupt { .. } => ExitKind::Data,
            _ => ExitKind::Internal,
        };
        Self {
            kind,
            error: err.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for CliError {}

impl From<se2p::Error> for CliError {
    fn from(err: se2p::Error) -> Self {
        Self::from_core(err)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Directory holding `<name>_A.txt`: either `<dir>/<name>` or `dir` itself.
pub fn locate_dataset(data_dir: Option<&Path>, name: &str) -> CliResult<PathBuf> {
    let dir = match data_dir {
        Some(d) => d.to_path_buf(),
        None => std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| CliError::config(format!("no data directory: pass --data-dir or set {DATA_DIR_ENV}")))?,
    };
    if !dir.is_dir() {
        return Err(CliError::config(format!(
            "data directory {} does not exist",
            dir.display()
        )));
    }
    for candidate in [dir.join(name), dir.clone()] {
        if candidate.join(format!("{name}_A.txt")).is_file() {
            return Ok(candidate);
        }
    }
    Err(CliError::config(format!(
        "dataset {name} not found under {} (expected {name}_A.txt)",
        dir.display()
    )))
}

/// Parses a dataset, switching to one-hot degree features when it has no
/// node labels.
pub fn load_dataset(data_dir: Option<&Path>, name: &str) -> CliResult<se2p::Dataset> {
    let name = config::canonical_dataset_name(name);
    let dir = locate_dataset(data_dir, &name)?;
    let ds = se2p::parse_tu_dataset(&dir, &name)?;
    if ds.d == 0 {
        Ok(se2p::encode_degree_features(&ds))
    } else {
        Ok(ds)
    }
}
