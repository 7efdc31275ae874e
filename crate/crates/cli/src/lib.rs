//! Library side of the `dpi` command-line tool: configuration, built-in
//! presets, and the `simulate`, `sweep` and `certify` commands.

pub mod commands;
pub mod config;
pub mod presets;

use thiserror::Error;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NOT_CERTIFIED: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: dpi_core::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("hypotheses not certified: {0}")]
    NotCertified(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => EXIT_VALIDATION,
            CliError::Core { source, .. } if source.is_validation() => EXIT_VALIDATION,
            CliError::Core { .. } => EXIT_NUMERICAL,
            CliError::NotCertified(_) => EXIT_NOT_CERTIFIED,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Loads a config from a file or a named preset (exactly one must be given)
/// and applies a seed override.
pub fn load_config(
    path: Option<&std::path::Path>,
    preset: Option<&str>,
    seed: Option<u64>,
) -> Result<RunConfig, CliError> {
    let mut cfg = match (path, preset) {
        (Some(p), None) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            RunConfig::from_toml(&text)?
        }
        (None, Some(name)) => presets::load(name)?,
        (Some(_), Some(_)) => return Err(CliError::Config("give either --config or --preset, not both".into())),
        (None, None) => return Err(CliError::Config("one of --config or --preset is required".into())),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}
