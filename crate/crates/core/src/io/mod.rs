//! Run configuration, initial-map families, metric rescaling, output files
//! and the command-line subcommands.

pub mod commands;
pub mod config;
pub mod output;
pub mod rescale;
