//! Experiment driver behind the `qbo` binary: benchmark runs, oracle and
//! gradient checks, and response-surface dumps.

pub mod config;
pub mod error;
pub mod gradcheck;
pub mod oracle;
mod output;
pub mod run;
pub mod surface;

pub use config::{BudgetMode, ExperimentConfig};
pub use error::{CliError, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION};
pub use output::{write_csv, write_json};

/// Version stamped into every JSON report.
pub const SCHEMA_VERSION: u32 = 1;
