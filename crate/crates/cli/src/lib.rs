//! Experiment harness for channel-aware federated learning: config files,
//! datasets, subcommands and metrics output.

pub mod commands;
pub mod config;
pub mod data;
pub mod experiment;
pub mod output;
