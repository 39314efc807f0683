//! Experiment harness around `bislab-core`: configuration files, single
//! runs, grids with resume, and mean ± sd reports.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod grid;
pub mod report;
pub mod runner;

pub use error::{CliError, Result};
