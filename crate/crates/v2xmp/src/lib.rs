//! File formats, configuration and experiment orchestration for the `v2xmp` planner.
//!
//! The numerical work lives in [`v2xmp_core`]. This crate reads TOML
//! configurations, runs solves, trials and Monte Carlo sweeps (in parallel
//! across trials), and writes the CSV and JSON artifacts described in [`output`].

pub mod config;
pub mod output;
pub mod runner;

/// Errors surfaced by the command-line tool.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The configuration file could not be parsed or holds invalid values.
    #[error("config error at `{path}`: {message}")]
    Config {
        /// Dotted key path of the offending entry, empty when unknown.
        path: String,
        /// Parser or validation message.
        message: String,
    },
    /// Inconsistent command-line arguments.
    #[error("usage error: {0}")]
    Usage(String),
    /// Filesystem failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// CSV serialisation failure.
    #[error(transparent)]
    Csv(#[from] csv::Error),
    /// JSON serialisation failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    /// Failure inside the planner.
    #[error(transparent)]
    Core(#[from] v2xmp_core::Error),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Usage(_) => "usage",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Core(v2xmp_core::Error::Infeasible { .. }) => "infeasible",
            Error::Core(_) => "solver",
        }
    }
}

/// Crate result alias.
pub type Result<T> = std::result::Result<T, Error>;
