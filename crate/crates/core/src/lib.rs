//! Skeleton-based action classification and temporal action detection with
//! small convolutional networks trained from scratch.
// `!(a >= b)` style comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod skeleton_data;
pub mod tensor;

pub use error::{Error, Result};
