pub mod datagen;
pub mod distill;
pub mod error;
pub mod exec;
pub mod harness;
pub mod indicators;
pub mod nn;
pub mod pkn;
pub mod rng;

pub use error::{Error, Result};
