//! Config-driven experiment runner for the `fedlab` binary.

pub mod analyze;
pub mod compare;
pub mod config;
pub mod data;
pub mod manifest;
pub mod metrics;
pub mod run;

pub use config::{ConfigError, FileConfig};
pub use manifest::{Manifest, Status};
pub use run::{run, RunOptions};
