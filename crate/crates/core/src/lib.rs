pub mod datasets;
pub mod error;
pub mod gemm;
pub mod hwmodel;
pub mod netzoo;
pub mod qat;
pub mod quantizer;
pub mod shift;
pub mod tensor;

pub use error::{NbqError, Result};
pub use tensor::Tensor;
