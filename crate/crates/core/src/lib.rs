//! Spike-aware remaining-useful-life estimation for rolling bearings.
//!
//! A causal convolutional forecaster predicts a degradation indicator, an
//! adaptive threshold locates the onset of degradation, and a blended tree
//! ensemble regresses normalized RUL over the post-onset segment.

pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod forecaster;
pub mod metrics;
pub mod onset;
pub mod pipeline;

pub use error::{Error, ErrorClass, Result};
