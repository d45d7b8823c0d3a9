//! Differentiable timbre descriptors, a toy style-based waveform GAN and the
//! evaluation metrics used to judge descriptor-controlled drum synthesis.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod dsp;
pub mod envelope;
pub mod error;
pub mod eval;
pub mod gan;
pub mod io;
pub mod sampler;
pub mod synth;
pub mod timbre;

pub use error::{Error, Result};
