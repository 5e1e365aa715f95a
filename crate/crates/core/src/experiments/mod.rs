//! Configuration, orchestration and reporting behind the `advlab` binary.

pub mod config;
pub mod fit;
pub mod reports;
pub mod svg;
pub mod sweep;
pub mod verify;

pub use config::ExperimentConfig;
pub use fit::{fit_slope, SlopeFit};
pub use sweep::{run_sweep, RunRecord};
pub use verify::{run_verify, Fault, VerifyReport};
