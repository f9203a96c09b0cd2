//! Experiment runner for the calibrated log-optimal investor: configuration,
//! CSV market ingestion, report writing and offline verification.

pub mod config;
pub mod error;
pub mod market_csv;
pub mod report;
pub mod run;
pub mod verify;

pub use config::{ExperimentConfig, MarketConfig, MarketKind, Overrides};
pub use error::CliError;
pub use market_csv::load_market_csv;
pub use run::{run_command, Experiment};
pub use verify::verify_dir;
