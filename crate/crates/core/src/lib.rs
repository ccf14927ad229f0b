//! Exact simulation of hamming-weight-preserving circuits built from
//! two-wire rotations, with data loaders, trainable orthogonal layers, and
//! shot sampling on top.

pub mod attention;
pub mod basis;
pub mod circuit;
pub mod dense;
pub mod error;
pub mod loaders;
pub mod mat;
pub mod ortho;
pub mod rng;
pub mod sampling;
pub mod subspace;

pub use error::{CoreError, Result};
