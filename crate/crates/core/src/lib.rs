pub mod anisotropy;
pub mod check;
pub mod config;
pub mod driver;
pub mod elasticity;
pub mod energy;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod grid;
pub mod output;
mod precond;
pub mod stability;
pub mod stepper;

pub use error::{Error, Result};
