//! Reverse-mode automatic differentiation over dense row-major tensors.

mod adam;
mod check;
mod fft;
mod graph;
pub(crate) mod kernels;
mod real;
mod tensor;

pub use adam::AdamState;
pub use check::{gradient_check, ZERO_GRADIENT};
pub use fft::{fft2_planes, FftPlan};
pub use graph::{ComplexPair, Gradients, Graph, Var};
pub use kernels::{retained_frequencies, transfer_function, transient_response};
pub use real::Real;
pub use tensor::{BitRepr, Tensor};
