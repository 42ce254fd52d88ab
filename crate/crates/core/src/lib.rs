//! Stereo-to-five-channel upmixing with a stereo-conditioned variational
//! autoencoder whose latent code captures the spatial arrangement of the
//! sources.
//!
//! The crate covers the whole workflow: WAV I/O, STFT framing, amplitude
//! panning on a five-speaker ring, corpus synthesis from stems, the model and
//! its training loop, style-transfer, blind and baseline upmixing, spatial
//! evaluation metrics and latent-space analysis.

pub mod audio;
pub mod cli;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod latent;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod upmix;
pub mod vbap;

pub use error::{Error, Result};
