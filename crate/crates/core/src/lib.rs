pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Scalar, Tensor, Var};
pub mod model;
pub mod dataset;
pub mod pseudoanom;
pub mod scoring;
pub mod evaluation;
pub mod trainer;
pub mod sweep;
