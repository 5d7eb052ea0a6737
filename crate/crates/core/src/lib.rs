pub mod data;
pub mod engine;
pub mod error;
pub mod nn;
pub mod optim;
pub mod schedule;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use tensor::Tensor;
