//! Experiment runner for the `wpt-sched-core` models: TOML configs, a
//! parallel grid runner with CSV/JSON output, and text reports.

pub mod config;
pub mod report;
pub mod runner;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{0}: {1}")]
    Csv(String, #[source] csv::Error),
    #[error("schema mismatch: {0}")]
    Schema(String),
}
