//! Multi-exposure image fusion without ground truth.
//!
//! This crate fuses a pair of differently exposed photographs of a static
//! scene into one well-exposed image. The luminance channel is fused by a
//! small tied-weight convolutional network trained directly against a
//! no-reference structural quality metric, so no fused reference images are
//! ever needed; chrominance is fused by a closed-form saturation weighting.
//! A classical quality-weighted pyramid-blending baseline and a scoring
//! harness round out the toolkit.
//!
//! The narrative guide lives in `book/` (build it with `mdbook build book`);
//! its code snippets are compiled and run as doc-tests from this crate.

pub mod error;
pub mod gradcore;
pub mod mefssim;
pub mod network;
pub mod planar;
pub mod training;

pub use error::{Error, Result};
pub use planar::{PlanarImage, RgbImageF};
