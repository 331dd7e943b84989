//! Subcommand implementations behind the `sepsis` binary.

pub mod commands;
pub mod config;
pub mod store;

use std::fmt;
use std::path::{Path, PathBuf};

pub use commands::{run, Step};
pub use config::PipelineConfig;
pub use store::{Manifest, MissingArtifact};

/// Usage or configuration problems; the binary exits with status 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub issues: Vec<String>,
}

impl ConfigError {
    pub fn new(issue: impl Into<String>) -> Self {
        Self { issues: vec![issue.into()] }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for issue in &self.issues {
            write!(f, "\n  - {issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Loads the config (or the defaults), applies command-line overrides and
/// derives stage seeds. Relative paths in a config file are taken relative
/// to that file; everything else is relative to the working directory.
pub fn prepare(
    config_path: Option<&Path>,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<PipelineConfig, ConfigError> {
    let cwd = std::env::current_dir().map_err(|e| ConfigError::new(format!("working directory: {e}")))?;
    let mut config = match config_path {
        Some(p) => {
            let mut c = PipelineConfig::load(p)?;
            let base = p.parent().filter(|d| !d.as_os_str().is_empty()).map_or(cwd.clone(), |d| cwd.join(d));
            c.resolve_paths(&base);
            c
        }
        None => {
            let mut c = PipelineConfig::default();
            c.resolve_paths(&cwd);
            c
        }
    };
    if let Some(out) = out {
        config.paths.output_dir = cwd.join(out);
    }
    if seed.is_some() {
        config.seed = seed;
    }
    Ok(config.with_derived_seeds())
}

/// Exit status for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.downcast_ref::<ConfigError>().is_some()) {
        1
    } else {
        2
    }
}
