//! Misalignment-robust multi-focus image fusion.
//!
//! One box-filter Hessian scale space per input image drives both the
//! feature-based translation registration and the per-pixel focus saliency
//! used to weight the fusion, so the expensive filtering happens once.

pub mod error;
pub mod features;
pub mod fusion;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod raster;
pub mod registration;
pub mod scale_space;
pub mod synth;

pub use error::{FuseError, Result};
pub use raster::{Grid, Image, IntegralImage, ValidityMask};
