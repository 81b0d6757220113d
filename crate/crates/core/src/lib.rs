pub mod cost;
pub mod discretize;
pub mod error;
pub mod hydraulics;
pub mod integrate;
pub mod riccati;
pub mod runner;

pub use error::{Error, Result};
