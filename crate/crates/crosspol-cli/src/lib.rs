//! Experiment driver library for the crosspol toolkit: configuration
//! loading, deterministic seeding, the four built-in experiments, and
//! CSV/JSON emission. The `crosspol` binary is a thin wrapper over this
//! crate.

pub mod config;
pub mod experiments;
pub mod report;
