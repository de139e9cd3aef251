//! Multi-branch transformer for joint hyperspectral and LiDAR pixel
//! classification, with a minimal reverse-mode autodiff engine underneath.

pub mod attention;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod exec;
pub mod fusion;
pub mod init;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
