use std::f64::consts::PI;

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Highest cutoff at which the Chamberlin structure is run, as a fraction of
/// the sample rate.
const MAX_CUTOFF_RATIO: f64 = 1.0 / 6.0;

/// Largest tuning coefficient `f = 2 sin(pi fc / fs)` for which the filter
/// with damping `1/q` stays stable (`f^2 + 2 f / q < 4`), with 10% margin.
fn stable_tuning_limit(q: f64) -> f64 {
    let damping = 1.0 / q;
    0.9 * (-damping + (damping * damping + 4.0).sqrt())
}

/// Resonant second-order lowpass (Chamberlin state-variable form) with the
/// cutoff updated every sample.
///
/// Cutoffs are validated against `(0, nyquist)` and then clamped to the
/// stable operating range before use.
pub fn svf_lowpass(buffer: &AudioBuffer, cutoff_hz: &[f64], q: f64) -> Result<AudioBuffer> {
    if cutoff_hz.len() != buffer.samples.len() {
        return Err(Error::config(format!(
            "cutoff series has {} values for {} samples",
            cutoff_hz.len(),
            buffer.samples.len()
        )));
    }
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::config(format!("filter q must be positive, got {q}")));
    }
    let fs = f64::from(buffer.sample_rate);
    let nyquist = fs / 2.0;
    if let Some((i, bad)) = cutoff_hz
        .iter()
        .enumerate()
        .find(|(_, &c)| !(c > 0.0 && c < nyquist))
    {
        return Err(Error::config(format!(
            "cutoff {bad} Hz at sample {i} is outside (0, {nyquist})"
        )));
    }

    let damping = 1.0 / q;
    let tuning_limit = stable_tuning_limit(q);
    let max_cutoff = fs * MAX_CUTOFF_RATIO;
    let mut low = 0.0;
    let mut band = 0.0;
    let samples = buffer
        .samples
        .iter()
        .zip(cutoff_hz)
        .map(|(&input, &cutoff)| {
            let tuning = (2.0 * (PI * cutoff.min(max_cutoff) / fs).sin()).min(tuning_limit);
            low += tuning * band;
            let high = input - low - damping * band;
            band += tuning * high;
            low
        })
        .collect();
    Ok(AudioBuffer {
        sample_rate: buffer.sample_rate,
        samples,
    })
}
