use rustfft::{num_complex::Complex, FftPlanner};

use super::AudioBuffer;
use crate::error::{Error, Result};

const A_WEIGHT_OFFSET_DB: f64 = 2.0;

fn a_weighting_response(f: f64) -> f64 {
    let f2 = f * f;
    let c1 = 20.6_f64.powi(2);
    let c2 = 107.7_f64.powi(2);
    let c3 = 737.9_f64.powi(2);
    let c4 = 12_194.0_f64.powi(2);
    c4 * f2 * f2 / ((f2 + c1) * ((f2 + c2) * (f2 + c3)).sqrt() * (f2 + c4))
}

/// A-weighting curve in dB.
pub fn a_weighting_db(f: f64) -> Result<f64> {
    if !(f > 0.0 && f.is_finite()) {
        return Err(Error::domain(format!(
            "A-weighting is defined for positive frequencies, got {f}"
        )));
    }
    Ok(20.0 * a_weighting_response(f).log10() + A_WEIGHT_OFFSET_DB)
}

/// Linear A-weighting gain; zero at DC.
pub fn a_weighting_gain(f: f64) -> f64 {
    if f <= 0.0 {
        0.0
    } else {
        a_weighting_response(f) * 10f64.powf(A_WEIGHT_OFFSET_DB / 20.0)
    }
}

/// A-weighted RMS level of the whole buffer, evaluated in the frequency
/// domain through Parseval's relation.
pub fn a_weighted_rms(buffer: &AudioBuffer) -> Result<f64> {
    let n = buffer.samples.len();
    if n == 0 {
        return Err(Error::domain("A-weighted RMS of an empty buffer"));
    }
    if buffer.samples.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let mut spectrum: Vec<Complex<f64>> = buffer
        .samples
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut spectrum);
    let bin_hz = f64::from(buffer.sample_rate) / n as f64;
    let weighted_energy: f64 = spectrum
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let f = k.min(n - k) as f64 * bin_hz;
            c.norm_sqr() * a_weighting_gain(f).powi(2)
        })
        .sum();
    Ok((weighted_energy / (n as f64 * n as f64)).sqrt())
}

pub fn amplitude_to_db(x: f64) -> f64 {
    20.0 * x.log10()
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}
