//! The experiment drivers behind each CLI subcommand.

pub mod bearings;
pub mod gamma;
pub mod orbit;
