//! Config-driven experiment runner for federated prompt learning.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{parse_config, parse_config_str, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{origin}: {}{key}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Parse { origin: String, key: String, line: Option<usize>, message: String },
    #[error("invalid config: {key}: {message}")]
    Invalid { key: String, message: String },
    #[error(transparent)]
    Core(#[from] fedprompt_core::Error),
    #[error("{0}")]
    Output(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(format!("json: {e}"))
    }
}
