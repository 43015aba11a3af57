//! Configuration, snapshot persistence and experiment orchestration for the
//! `nutaxis` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod snapshot;

pub use config::{load_config, parse_config, InitialSpec, RunConfig};
pub use error::{CliError, Result};
pub use snapshot::{load_snapshot, load_snapshot_for, save_snapshot, Snapshot};
