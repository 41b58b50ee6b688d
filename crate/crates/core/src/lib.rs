//! Phonons in expanding and contracting ring-shaped condensates.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod fit;
pub mod integrator;
pub mod io;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
