//! Minimal dense-tensor math with reverse-mode gradients.
//!
//! This is not a general autodiff system: it provides exactly the pieces
//! the fusion graph needs — "same"-padded stride-1 convolution, elementwise
//! feature merging, the Adam optimizer, and a finite-difference checker for
//! validating every backward path. All operations are pure functions of
//! their inputs and safe to call concurrently on disjoint data.

mod adam;
mod conv;
mod gradcheck;
mod merge;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{conv2d_backward, conv2d_forward, Activation, ConvGrads, ConvLayer};
pub use gradcheck::{finite_diff_check, finite_diff_check_sampled, relative_error};
pub use merge::{concat_backward, concat_forward, merge_backward, merge_forward, MergeMode};
pub use tensor::Tensor3;
