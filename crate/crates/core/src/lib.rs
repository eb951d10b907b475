//! Timbre-space laboratory.
//!
//! Renders subtractive-synthesizer stimuli, extracts spectral and temporal
//! descriptors, aggregates pairwise dissimilarity ratings, fits non-metric
//! multidimensional scaling and correlates the resulting dimensions with the
//! descriptors.

pub mod bank;
pub mod descriptors;
pub mod error;
pub mod nmds;
pub mod pipeline;
pub mod ratings;
pub mod simulate;
pub mod stats;
pub mod synth;
pub mod wav;

pub use error::{Error, Result};

/// Sample rate of every rendered stimulus.
pub const SAMPLE_RATE: u32 = 44_100;

/// Fundamental of every oscillator (A4).
pub const F0_HZ: f64 = 440.0;
