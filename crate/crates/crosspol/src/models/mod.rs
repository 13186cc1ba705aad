//! Built-in benchmark problems: a conjugate Gamma model with an analytic
//! posterior, a Keplerian orbit-determination scenario, and a two-sensor
//! bearings-only tracking scenario.

pub mod bearings;
pub mod gamma;
pub mod orbit;
