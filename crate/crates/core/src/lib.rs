//! Wrist kinematics estimation from surface EMG.
//!
//! The pipeline filters and windows multi-channel sEMG, turns each window into
//! a spectral (or temporal) matrix, extracts 20-dimensional deep features with
//! a 1-D CNN, and regresses wrist angles from sequences of those features with
//! an LSTM. The two networks are trained separately.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod krr;
pub mod lstm;
pub mod nn;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
