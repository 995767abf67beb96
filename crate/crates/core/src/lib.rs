pub mod bench;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod model;
mod nn;
pub mod metrics;
pub mod params;
pub mod seisdata;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
