//! Data ingestion, file formats, synthetic dataset generation and the glue
//! the CLI sequences into the two-stage workflow.

pub mod config;
pub mod formats;
pub mod manifest;
pub mod noise;
pub mod ppm;
pub mod synth;

pub use noise::{add_noise, NoiseSpec};
