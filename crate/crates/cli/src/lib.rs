//! Configuration, orchestration and file output for the `qnd-squeeze` binary.

pub mod config;
pub mod output;
pub mod run;
