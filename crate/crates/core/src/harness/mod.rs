//! Simulation harness: environments, run configuration, the runner and trace output.

pub mod config;
pub mod emit;
pub mod env;
pub mod run;

pub use config::{OutputSpec, RunConfig};
pub use env::{Environment, EnvironmentSpec};
pub use run::{run, sweep, sweep_sequential, CheckResult, RunMeta, RunOptions, Trace, TraceRow};
