//! Detection, accuracy bounding and jamming mitigation of unauthorized
//! radio sensing, in simulation.

pub mod channel;
pub mod cli;
pub mod csce;
pub mod defense;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod iq;
pub mod signal;
pub mod tracking;

pub use error::{Error, Result};
