//! Scenario runner for the bi-copter toolkit: TOML scenario files, closed-loop
//! runs, benchmark and energy comparisons, and CSV/JSON outputs.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;

pub use config::ScenarioConfig;
pub use error::CliError;
