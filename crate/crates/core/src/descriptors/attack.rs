use super::stft::{frame_count, HOP_SIZE, WINDOW_SIZE};
use crate::error::{Error, Result};
use crate::synth::AudioBuffer;

pub const ATTACK_START_FRACTION: f64 = 0.2;
pub const ATTACK_STOP_FRACTION: f64 = 0.9;
/// Attack durations are floored here before taking the logarithm.
pub const MIN_ATTACK_S: f64 = 1e-3;

/// Frame-wise RMS energy envelope sampled at frame centres (seconds).
pub fn rms_envelope(buffer: &AudioBuffer) -> Result<(Vec<f64>, Vec<f64>)> {
    let frames = frame_count(buffer.len(), WINDOW_SIZE, HOP_SIZE);
    if frames == 0 {
        return Err(Error::domain(format!(
            "buffer of {} samples is shorter than one {WINDOW_SIZE}-sample window",
            buffer.len()
        )));
    }
    let sr = f64::from(buffer.sample_rate);
    let (times, levels) = (0..frames)
        .map(|f| {
            let start = f * HOP_SIZE;
            let window = &buffer.samples[start..start + WINDOW_SIZE];
            let rms = (window.iter().map(|x| x * x).sum::<f64>() / WINDOW_SIZE as f64).sqrt();
            ((start as f64 + WINDOW_SIZE as f64 / 2.0) / sr, rms)
        })
        .unzip();
    Ok((times, levels))
}

/// First time at or after index `from` where the piecewise-linear envelope
/// reaches `level`, with the index of the sample that reached it.
fn crossing(times: &[f64], values: &[f64], from: usize, level: f64) -> Option<(f64, usize)> {
    let i = (from..values.len()).find(|&i| values[i] >= level)?;
    if i == 0 || i == from {
        return Some((times[i], i));
    }
    let (t0, v0, t1, v1) = (times[i - 1], values[i - 1], times[i], values[i]);
    Some((t0 + (level - v0) / (v1 - v0) * (t1 - t0), i))
}

/// Attack duration of a sampled envelope: time from the first crossing of
/// 20% of its maximum to the next crossing of 90%.
pub fn attack_time_from_envelope(times: &[f64], values: &[f64]) -> Result<f64> {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 || times.len() != values.len() {
        return Err(Error::domain("attack time of a silent envelope"));
    }
    let (start, idx) = crossing(times, values, 0, ATTACK_START_FRACTION * max)
        .expect("maximum is reached somewhere");
    let (stop, _) = crossing(times, values, idx, ATTACK_STOP_FRACTION * max)
        .expect("maximum is reached somewhere");
    Ok(stop - start)
}

/// `log10` of the attack duration of the RMS envelope, floored at 1 ms.
pub fn log_attack_time(buffer: &AudioBuffer) -> Result<f64> {
    let (times, values) = rms_envelope(buffer)?;
    let attack = attack_time_from_envelope(&times, &values)?;
    Ok(attack.max(MIN_ATTACK_S).log10())
}
