//! Dense `f64` tensors with a tape-based reverse-mode autodiff [`Graph`].
//!
//! Everything is row-major and single-sample: images are `[C, H, W]`,
//! sequences are `[T, D]`. The heavy kernels (GEMM, im2col convolution and
//! large elementwise maps) run on rayon when the `parallel` feature is on and
//! fall back to plain loops otherwise. Both variants are always compiled as
//! `*_seq` / `*_par` functions in [`kernels`] so they can be benchmarked side
//! by side.

pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod par;
mod params;
mod tensor;

pub use graph::{gelu, sigmoid, CustomOp, Gradients, Graph, Var};
pub use params::{ParamGrads, ParamId, ParamInfo, ParamStore};
pub use tensor::Tensor;
