pub mod average;
pub mod error;
pub mod experiment;
pub mod features;
pub mod field;
pub mod model;
pub mod nn;
pub mod optim;
pub mod synth;

pub use error::{Error, Result};
