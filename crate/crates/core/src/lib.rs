pub mod cli;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod model;
pub mod numerics;
pub mod profiles;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
