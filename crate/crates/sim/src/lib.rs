//! Data preparation, experiment orchestration and file formats around
//! `psgf-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod ingest;
pub mod roundlog;

pub use config::ExperimentConfig;
