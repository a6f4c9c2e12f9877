//! CSA-Net: 2.5D medical image segmentation with cross-slice and in-slice
//! attention, built on a small reverse-mode autodiff core.

pub mod attention;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
