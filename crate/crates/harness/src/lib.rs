//! Configuration, seeded initialization, stage execution, gradient-check
//! runner, TSSA scaling benchmark and FLOP estimator behind the `mgdfis`
//! command-line tool.

pub mod bench;
pub mod config;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod init;
pub mod run;
pub mod threads;

pub use config::{ConfigError, RunConfig, Stage};
pub use error::{exit, HarnessError};
pub use flops::{flops, FlopReport, Level};
pub use init::{init_inputs, init_params};
