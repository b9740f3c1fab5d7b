//! Experiment runner and report generator: executes a matrix of run
//! configurations over scenario seeds and summarizes the resulting logs.

pub mod cmd_report;
pub mod cmd_run;
pub mod config;
pub mod error;

pub use error::CliError;
