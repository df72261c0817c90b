//! Two-stage multi-view skill assessment from video.
//!
//! Stage one is a denoising 2D convolutional autoencoder (with a frozen
//! perceptual feature extractor in the loss) that turns each frame into a
//! short code vector. Stage two is a temporal 1D convolutional classifier
//! that fuses the per-view code sequences with cross-view attention and
//! squeeze-and-excitation recalibration. Around the models sit GradCAM
//! explanations, a metric/cross-validation kit with trust-spectrum analysis,
//! and a pipeline layer for file formats, synthetic data and the CLI.

pub mod autoencoder;
pub mod classifier;
pub mod error;
pub mod evalkit;
pub mod explain;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
