pub mod container;
pub mod det;
pub mod error;
pub mod harness;
pub mod nn;
pub mod perceptron;
pub mod tensor;
pub mod vatt2vec;

pub use error::{Error, Result};
pub use tensor::{ParamId, ParamStore, Parameter, Tensor};
