//! Config-driven experiment runner, results files and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod results;
pub mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ExperimentConfig, ExperimentKind};
pub use results::ResultsRecord;
pub use run::run;
