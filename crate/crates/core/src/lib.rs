pub mod analysis;
pub mod config;
pub mod cross_modal;
pub mod dataset;
pub mod encoders;
pub mod knowledge;
pub mod model;
mod error;
pub mod tensor;

pub use error::{Error, Result};
