//! Headphone screening: three 200 Hz tones, one attenuated by 6 dB, one
//! played in antiphase across the stereo channels. Over loudspeakers the
//! antiphase tone cancels and sounds quietest.

use rand::Rng;
use serde::{Deserialize, Serialize};
use timbre_core::synth::db_to_amplitude;
use timbre_core::wav::encode_wav;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreeningConfig {
    pub trials: usize,
    pub pass_threshold: usize,
    pub tone_hz: f64,
    pub attenuation_db: f64,
    pub level_dbfs: f64,
    pub tone_ms: u32,
    pub gap_ms: u32,
    pub ramp_ms: u32,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            trials: 6,
            pass_threshold: 5,
            tone_hz: 200.0,
            attenuation_db: 6.0,
            level_dbfs: -12.0,
            tone_ms: 1000,
            gap_ms: 500,
            ramp_ms: 100,
        }
    }
}

pub const INTERVALS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreeningTrial {
    /// Interval played 6 dB quieter: the correct answer.
    pub correct_index: usize,
    /// Interval whose right channel is inverted.
    pub antiphase_index: usize,
}

impl ScreeningTrial {
    pub fn is_valid(&self) -> bool {
        self.correct_index < INTERVALS
            && self.antiphase_index < INTERVALS
            && self.correct_index != self.antiphase_index
    }
}

pub fn random_trials<R: Rng>(count: usize, rng: &mut R) -> Vec<ScreeningTrial> {
    (0..count)
        .map(|_| {
            let correct_index = rng.random_range(0..INTERVALS);
            let offset = rng.random_range(1..INTERVALS);
            ScreeningTrial {
                correct_index,
                antiphase_index: (correct_index + offset) % INTERVALS,
            }
        })
        .collect()
}

/// Stereo WAV for one screening trial.
pub fn render_trial(trial: &ScreeningTrial, cfg: &ScreeningConfig, sample_rate: u32) -> Vec<u8> {
    let sr = f64::from(sample_rate);
    let samples = |ms: u32| (f64::from(ms) * sr / 1000.0).round() as usize;
    let (tone, gap, ramp) = (samples(cfg.tone_ms), samples(cfg.gap_ms), samples(cfg.ramp_ms));
    let total = INTERVALS * tone + (INTERVALS - 1) * gap;
    let mut left = vec![0.0; total];
    let mut right = vec![0.0; total];
    let base = db_to_amplitude(cfg.level_dbfs);
    for interval in 0..INTERVALS {
        let mut amp = base;
        if interval == trial.correct_index {
            amp *= db_to_amplitude(-cfg.attenuation_db);
        }
        let polarity = if interval == trial.antiphase_index { -1.0 } else { 1.0 };
        let start = interval * (tone + gap);
        for n in 0..tone {
            let envelope = if n < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * n as f64 / ramp as f64).cos()
            } else if n >= tone - ramp {
                0.5 - 0.5 * (std::f64::consts::PI * (tone - 1 - n) as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            let phase = 2.0 * std::f64::consts::PI * cfg.tone_hz * n as f64 / sr;
            let v = amp * envelope * phase.sin();
            left[start + n] = v;
            right[start + n] = polarity * v;
        }
    }
    encode_wav(&[&left, &right], sample_rate).expect("screening audio is in range")
}
