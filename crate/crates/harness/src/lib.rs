//! Experiment harness for the PMB track-before-detect filter: configs,
//! Monte-Carlo orchestration, result files and mode comparisons.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;

pub use config::{ExperimentConfig, FilterParams, ScenarioFile};
pub use error::{HarnessError, Result};
