//! Soft-input soft-output MMSE FIR turbo equalizers for single-carrier BICM
//! over static ISI channels.
//!
//! The crate covers the full receiver chain:
//!
//! - [`mapping`]: Gray-labelled constellations, soft mapping from prior LLRs,
//!   exact log-domain MAP demapping and the Gaussian division used for
//!   expectation-propagation (EP) feedback.
//! - [`channel`]: ISI + AWGN transmission and the sliding-window Toeplitz model.
//! - [`equalizer`]: time-varying (TV) and iteration-varying (IV) linear and
//!   decision-feedback equalizers with APP or EP soft feedback.
//! - [`prediction`]: online prediction of the causal feedback reliability that
//!   the IV DFE filters need, built from an analytic equalizer model and
//!   Monte Carlo demapper look-up tables.
//! - [`coding`]: the `[7,5]` convolutional code, puncturing, interleaving and
//!   an exact log-MAP BCJR decoder.
//! - [`harness`]: Monte Carlo BER sweeps, EXIT measurement, achievable rates
//!   and prediction-accuracy studies.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too. Index loops
// over several parallel arrays read better than zipped iterators here.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channel;
pub mod coding;
pub mod equalizer;
mod error;
pub mod harness;
pub(crate) mod linalg;
pub mod mapping;
pub mod prediction;
pub mod rng;

pub use error::{Error, Result};
pub use num_complex::Complex64;
