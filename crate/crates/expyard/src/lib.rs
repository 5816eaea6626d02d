//! Config-driven experiment runner: versioned configs, scenario pipelines,
//! checksummed artifacts and the `decaylab` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod run;

pub use cli::cli;
pub use config::{ExperimentConfig, Scenario};
pub use error::{YardError, YardResult};
pub use run::{run_experiment, RunManifest};
