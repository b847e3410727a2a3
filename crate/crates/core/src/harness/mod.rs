//! Reproduction surface: toy datasets, metrics, plots, run configuration,
//! checkpoints and the verification suite.

pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod metrics;
pub mod plot;
pub mod verify;
