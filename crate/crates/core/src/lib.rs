//! Coded-aperture design and single-image depth-from-defocus toolkit.
//!
//! The crate jointly learns a binary aperture pattern and a blur-size
//! classifier, evaluates arbitrary aperture codes via a Gaussian-prior
//! KL-divergence metric, and estimates depth with a classical Wiener
//! deconvolution baseline.

pub mod code_eval;
pub mod data;
pub mod error;
pub mod fft2;
pub mod formats;
pub mod fuse;
pub mod grid;
pub mod learner;
pub mod optics;
pub mod sim;
pub mod wiener;

pub use error::{Error, Result};
pub use grid::Grid;
