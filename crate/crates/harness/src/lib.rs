//! Seeded experiment harness: TOML configs, the five scenarios, artifact
//! writing and the `reconfig` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod output;
pub mod scenarios;

pub use config::{ExperimentConfig, Scenario};
pub use error::{HarnessError, Result};
