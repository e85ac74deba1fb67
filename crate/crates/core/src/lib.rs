//! Convection-diffusion solvers on nested square grids: a classical
//! geometric multigrid baseline and a trainable multigrid-structured
//! convolutional solver, with the small tensor and autodiff layer they share.

pub mod autodiff;
pub mod bench;
pub mod config;
pub mod datasets;
pub mod discretization;
pub mod error;
pub mod iteration;
pub mod learned;
pub mod multigrid;
pub mod tensor;
pub mod timing;
pub mod training;
pub mod weights_io;

pub use error::{Error, Result};
pub use tensor::{ConvKernel, GridTensor, Precision, Real, Shape, Stride};
