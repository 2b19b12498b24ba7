//! Gradient-penalty machine unlearning for contrastive and supervised models.

// `!(x > 0.0)` rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod evalreport;
pub mod mia;
pub mod nn;
pub mod pipeline;
pub mod unlearn;

pub use error::{Error, Result};
