pub mod autodiff;
pub mod codec;
pub mod coder;
pub mod density;
pub mod error;
pub mod image_io;
pub mod model;
pub mod tensor;
pub mod train;
mod wire;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
