//! Class-incremental training for pixel-level classification with
//! background-shift aware losses, classifier initialisation, incremental
//! scenarios, and an experiment harness.

pub mod error;
pub mod eval;
pub mod exec;
pub mod harness;
pub mod labels;
pub mod model;
pub mod losses;
pub mod numerics;
pub mod protocol;
pub mod regularizers;
pub mod rng;
pub mod scenario;
pub mod trainer;

pub use error::{Error, Result};
