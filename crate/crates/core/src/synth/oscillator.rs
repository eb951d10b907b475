//! Alias-free oscillator rendering.
//!
//! Every source is periodic in the carrier period (the modulator runs at an
//! integer multiple of the carrier), so it is rendered additively from its
//! Fourier series, truncated below Nyquist. Unmodulated waveforms use their
//! closed-form series. Phase-modulated waveforms have their series measured
//! from one densely sampled period of the ideal modulated waveform.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points per period used to measure the series of a modulated waveform.
const PERIOD_POINTS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Oscillator {
    Sawtooth,
    Pulse { duty: f64 },
}

impl Oscillator {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Oscillator::Sawtooth => Ok(()),
            Oscillator::Pulse { duty } if duty > 0.0 && duty < 1.0 => Ok(()),
            Oscillator::Pulse { duty } => Err(Error::config(format!(
                "pulse duty cycle must lie in (0, 1), got {duty}"
            ))),
        }
    }

    /// Ideal (non-bandlimited) waveform at phase `phi`, zero mean, with
    /// discontinuities evaluated at their midpoint.
    fn naive(&self, phi: f64) -> f64 {
        match *self {
            Oscillator::Sawtooth => {
                let wrapped = phi.rem_euclid(2.0 * PI);
                if wrapped == 0.0 {
                    0.0
                } else {
                    (PI - wrapped) / PI
                }
            }
            Oscillator::Pulse { duty } => {
                // centred on phase 0: high for |phase| < pi * duty
                let centred = (phi + PI).rem_euclid(2.0 * PI) - PI;
                let edge = PI * duty;
                let level = if centred.abs() < edge {
                    1.0
                } else if centred.abs() == edge {
                    0.0
                } else {
                    -1.0
                };
                level - (2.0 * duty - 1.0)
            }
        }
    }
}

/// Phase modulation by a sinusoid at `ratio` times the carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmSettings {
    pub ratio: u32,
    pub index: f64,
}

impl FmSettings {
    pub fn validate(&self) -> Result<()> {
        if self.ratio == 0 {
            return Err(Error::config("fm ratio must be a positive integer"));
        }
        if !self.index.is_finite() || self.index < 0.0 {
            return Err(Error::config(format!(
                "fm index must be a non-negative number, got {}",
                self.index
            )));
        }
        Ok(())
    }

    fn is_active(&self) -> bool {
        self.index != 0.0
    }
}

/// Fourier coefficients of a zero-mean periodic waveform:
/// `x(theta) = sum_n cos[n] cos(n theta) + sin[n] sin(n theta)`, `n >= 1`.
/// Index 0 is unused and always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSeries {
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl HarmonicSeries {
    pub fn harmonics(&self) -> usize {
        self.cos.len().saturating_sub(1)
    }

    /// Amplitude of harmonic `n`.
    pub fn amplitude(&self, n: usize) -> f64 {
        self.cos[n].hypot(self.sin[n])
    }
}

/// Highest harmonic of `f0` strictly below Nyquist.
pub fn max_harmonic(f0: f64, sample_rate: f64) -> usize {
    let nyquist = sample_rate / 2.0;
    let mut n = (nyquist / f0).floor() as usize;
    if n as f64 * f0 >= nyquist {
        n -= 1;
    }
    n
}

/// Series of the (optionally phase-modulated) oscillator up to `harmonics`.
pub fn harmonic_series(osc: Oscillator, fm: Option<FmSettings>, harmonics: usize) -> HarmonicSeries {
    let mut cos = vec![0.0; harmonics + 1];
    let mut sin = vec![0.0; harmonics + 1];
    match fm.filter(FmSettings::is_active) {
        None => match osc {
            Oscillator::Sawtooth => {
                for (n, s) in sin.iter_mut().enumerate().skip(1) {
                    *s = 2.0 / (PI * n as f64);
                }
            }
            Oscillator::Pulse { duty } => {
                for (n, c) in cos.iter_mut().enumerate().skip(1) {
                    let n = n as f64;
                    *c = 4.0 / (PI * n) * (PI * n * duty).sin();
                }
            }
        },
        Some(fm) => {
            let ratio = f64::from(fm.ratio);
            let mut period: Vec<Complex<f64>> = (0..PERIOD_POINTS)
                .map(|j| {
                    let theta = 2.0 * PI * j as f64 / PERIOD_POINTS as f64;
                    let phi = theta + fm.index * (ratio * theta).sin();
                    Complex::new(osc.naive(phi), 0.0)
                })
                .collect();
            FftPlanner::new()
                .plan_fft_forward(PERIOD_POINTS)
                .process(&mut period);
            let scale = 2.0 / PERIOD_POINTS as f64;
            for n in 1..=harmonics.min(PERIOD_POINTS / 2 - 1) {
                cos[n] = period[n].re * scale;
                sin[n] = -period[n].im * scale;
            }
        }
    }
    HarmonicSeries { cos, sin }
}

/// Renders `len` samples of `series` at fundamental `f0`, starting at phase 0.
///
/// `f0` must be a whole number of hertz so that phases reduce exactly to
/// integer table indices.
pub fn render_series(series: &HarmonicSeries, f0: f64, sample_rate: u32, len: usize) -> Vec<f64> {
    let sr = u64::from(sample_rate);
    let f0 = f0.round() as u64;
    let (sin_table, cos_table): (Vec<f64>, Vec<f64>) = (0..sr)
        .map(|p| (2.0 * PI * p as f64 / sr as f64).sin_cos())
        .unzip();
    (0..len as u64)
        .map(|i| {
            let base = (i * f0) % sr;
            let mut acc = 0.0;
            for n in 1..=series.harmonics() {
                let p = ((base * n as u64) % sr) as usize;
                acc += series.cos[n] * cos_table[p] + series.sin[n] * sin_table[p];
            }
            acc
        })
        .collect()
}
