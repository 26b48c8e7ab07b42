//! Library surface of the command-line harness; the binary in `main.rs` is a
//! thin argument-parsing wrapper so tests can drive the pipeline directly.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{
    cmd_attack, cmd_evaluate, cmd_gen_data, cmd_reproduce, cmd_train, Method, Workspace,
};
pub use config::ExperimentConfig;
