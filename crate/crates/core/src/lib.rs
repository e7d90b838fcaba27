//! Neural operators on polygonal domains with geometry memory injection.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: a small reverse-mode differentiation engine (tensors, FFT,
//!   convolution, attention primitives) and the Adam optimizer.
//! - [`geometry`]: random polygons and their mask / signed-distance /
//!   coordinate encoding.
//! - [`data`]: a finite-difference Darcy solver, dataset generation with a
//!   cross-family split and the binary dataset format.
//! - [`operators`]: FNO, attention and Laplace (pole-residue) backbones, the
//!   geometry encoders and the memory injection mechanisms.
//! - [`diagnostics`]: probe decoders, spectral profiles and gradient ratios.
//! - [`harness`]: configuration, training, ablation matrices and reports.

pub mod autodiff;
pub mod data;
pub mod diagnostics;
mod error;
pub mod geometry;
pub mod harness;
pub mod operators;

pub use error::{Error, Result};

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;
