//! End-to-end trainable multi-user molecule-mixture communication.
//!
//! Users map symbols to molecule mixtures, the mixtures cross a noisy channel
//! and reach a cross-reactive sensor array, and a shared decoder recovers every
//! user's symbol. Encoders and decoder train jointly by backpropagating through
//! the channel model; fixed-alphabet baselines and a Monte-Carlo evaluation
//! harness sit alongside.

pub mod baselines;
pub mod channel;
pub mod diffcore;
pub mod error;
pub mod evaluation;
pub mod networks;
pub mod rng;
pub mod sensor;
pub mod training;

pub use error::{Error, Result};
