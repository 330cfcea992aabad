//! Host-side companion of `multisense-core`: dataset, model, operator,
//! trace and report files, experiment configs, parallel grid evaluation and
//! the `multisense` command-line tool.

pub mod archive;
pub mod artifacts;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fsutil;
pub mod report;
pub mod trace;

pub use config::ExperimentConfig;
pub use error::{FormatError, Result, SimError};
