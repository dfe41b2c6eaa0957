//! Experiment plumbing for the `kdcn` binary: configuration, fold and grid
//! runners, and report rendering.

pub mod commands;
pub mod experiment;
pub mod report;
pub mod runner;

pub use commands::{run, Cli, Command, Common};
