//! Small-mass approximation hierarchy for underdamped Langevin equations
//! with state-dependent drag, magnetic coupling and multiplicative noise.

pub mod coeffs;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod hierarchy;
pub mod linalg;
pub mod noise;

pub use error::{Error, Result};
