//! Tensor kernels for multi-scale global/detail feature fusion.
//!
//! The crate is generic over the real scalar type through [`Scalar`];
//! the `*64` and `*32` aliases below fix it to `f64` or `f32`. All ops
//! are pure functions of their inputs and parameter records, and every
//! differentiable op ships a hand-written backward pass.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod conv;
pub mod diffops;
pub mod dpam;
pub mod error;
pub mod fft;
pub mod ftssa;
pub mod gdim;
pub mod gradcheck;
pub mod io;
pub mod ops;
pub mod params;
pub mod pipeline;
mod scalar;
pub mod tensor;

pub use conv::{conv2d, conv2d_backward, conv2d_im2col, ConvSpec, Padding};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, DifferentiableOp, GradCheckOptions, GradCheckReport};
pub use ops::Activation;
pub use params::{Conv, Init, Linear, ParamSet};
pub use pipeline::{mgdfis, MgdfisParams};
pub use scalar::Scalar;
pub use tensor::{ComplexTensor, Dims, Matrix, Tensor};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type ComplexTensor64 = ComplexTensor<f64>;
pub type ComplexTensor32 = ComplexTensor<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
