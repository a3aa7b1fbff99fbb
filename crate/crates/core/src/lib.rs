//! Two-stage LDR to HDR reconstruction: data generation, models, losses,
//! metrics and training.

pub mod config;
pub mod datagen;
pub mod error;
pub mod imgio;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
