//! Configuration, file formats, reports and the command-line front end for
//! [`pidsynth_core`].
//!
//! Exit codes of the `pidsynth` binary: 0 success, 1 configuration or input
//! error, 2 infeasible (or a supplied certificate or gain fails its checks),
//! 3 solver or norm-computation failure, 4 simulation divergence.

pub mod cli;
pub mod config;
pub mod files;
pub mod pipeline;
pub mod report;

pub use cli::{run, Exit};
pub use config::Config;
