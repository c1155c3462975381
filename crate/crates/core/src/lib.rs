//! Simulation and asymptotics for γ-reflected fractional Brownian motion
//! with drift.

pub mod asymptotics;
pub mod constants;
pub mod error;
pub mod fbm;
pub mod harness;
pub mod field;
mod linalg;
pub mod mc;
pub mod model;
pub mod normal;
pub mod reflected;

pub use error::{Error, Result};
pub use model::ModelParams;
