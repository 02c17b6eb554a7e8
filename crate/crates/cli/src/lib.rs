//! Configuration, stage driver, artifacts, reports and plots for the
//! `triscale` command line tool.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod plots;
pub mod report;

pub use config::RunConfig;
pub use error::CliError;
pub use pipeline::{Pipeline, Stage, StageError};
pub use report::ConvergenceReport;
