//! Library surface behind the `trafficgp` binary: configuration schema,
//! report formats, and the command implementations. Kept as a library so
//! integration tests drive commands in-process.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::CliError;
pub use config::{RunConfig, TrainMode};
