//! Small reverse-mode differentiation engine.
//!
//! Only the primitives needed to train the encoders and decoder through the
//! channel are provided. Noise is drawn outside the tape and enters as
//! constants, so every recorded path is deterministic.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use matrix::Matrix;
pub use params::{AdamConfig, ParamId, ParamStore};
pub use tape::{BatchStats, Tape, Var, POWER_FLOOR};
