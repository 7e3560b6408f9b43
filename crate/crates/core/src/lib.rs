pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod pgm;
pub mod rgrvae;
pub mod symrep;
pub mod worlds;

pub use error::{Error, Result};
