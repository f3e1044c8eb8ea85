//! Weighted-sum-rate beamforming for downlink rate-splitting multiple access.
//!
//! * [`model`]: system model, rates and feasibility.
//! * [`fp`]: quadratic-transform auxiliaries and the penalized surrogate.
//! * [`solver`]: projected gradient ascent and the FP oracle.
//! * [`unfold`]: the deep-unfolded network and its training.
//! * [`datagen`]: instance sampling, labeling and dataset files.
//! * [`harness`]: ASR, out-of-distribution transforms and timing.

pub mod datagen;
pub mod error;
pub mod fp;
pub mod harness;
pub mod model;
pub mod scalar;
pub mod solver;
pub mod tape;
pub mod unfold;

pub use error::{Error, Result};
