//! PeriodGrad: a denoising-diffusion neural vocoder conditioned on an
//! explicit periodic signal, together with the DSP front end, a toy corpus
//! generator, training and synthesis, and pitch-control metrics.

pub mod diffusion;
pub mod dsp;
pub mod engine;
pub mod error;
pub mod features;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod network;
pub mod periodic;
pub mod pitch;

pub use error::{Error, Result};
