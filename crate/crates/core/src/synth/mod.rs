//! Offline subtractive synthesizer: oscillator, optional phase modulation,
//! resonant lowpass with an enveloped cutoff, enveloped gain and A-weighted
//! loudness normalization.

mod envelope;
mod filter;
mod loudness;
mod oscillator;

use serde::{Deserialize, Serialize};

pub use envelope::{adsr_value, AdsrEnvelope};
pub use filter::svf_lowpass;
pub use loudness::{a_weighted_rms, a_weighting_db, a_weighting_gain, amplitude_to_db, db_to_amplitude};
pub use oscillator::{harmonic_series, max_harmonic, render_series, FmSettings, HarmonicSeries, Oscillator};

use crate::error::{Error, Result};
use crate::{F0_HZ, SAMPLE_RATE};

/// Stimulus duration in milliseconds.
pub const DURATION_MS: u32 = 1_000;

/// Default A-weighted RMS target for normalized stimuli, in dBFS.
pub const TARGET_LEVEL_DBFS: f64 = -20.0;

/// Lowest cutoff handed to the filter.
pub const MIN_CUTOFF_HZ: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Self {
        Self {
            sample_rate,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::new(self.sample_rate, self.samples.iter().map(|x| x * gain).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSettings {
    pub cutoff_floor: f64,
    pub cutoff_peak: f64,
    pub resonance_q: f64,
    pub cutoff_env: AdsrEnvelope,
}

fn default_f0() -> f64 {
    F0_HZ
}

fn default_duration_ms() -> u32 {
    DURATION_MS
}

/// Complete parameterization of one stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub id: String,
    pub oscillator: Oscillator,
    #[serde(default = "default_f0")]
    pub f0: f64,
    #[serde(default)]
    pub fm: Option<FmSettings>,
    pub filter: FilterSettings,
    pub gain_env: AdsrEnvelope,
    #[serde(default = "default_duration_ms")]
    pub duration_ms: u32,
}

impl Patch {
    pub fn duration_s(&self) -> f64 {
        f64::from(self.duration_ms) / 1_000.0
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::config("patch id must not be empty"));
        }
        let ctx = |e: Error| Error::config(format!("patch {}: {e}", self.id));
        if self.f0 != F0_HZ {
            return Err(ctx(Error::config(format!(
                "oscillator frequency is fixed at {F0_HZ} Hz, got {}",
                self.f0
            ))));
        }
        if self.duration_ms != DURATION_MS {
            return Err(ctx(Error::config(format!(
                "duration is fixed at {DURATION_MS} ms, got {}",
                self.duration_ms
            ))));
        }
        self.oscillator.validate().map_err(ctx)?;
        if let Some(fm) = &self.fm {
            fm.validate().map_err(ctx)?;
        }
        let nyquist = f64::from(sample_rate) / 2.0;
        let f = &self.filter;
        if !(0.0 <= f.cutoff_floor && f.cutoff_floor <= f.cutoff_peak && f.cutoff_peak <= nyquist) {
            return Err(ctx(Error::config(format!(
                "cutoffs must satisfy 0 <= floor ({}) <= peak ({}) <= {nyquist}",
                f.cutoff_floor, f.cutoff_peak
            ))));
        }
        if !(f.resonance_q.is_finite() && f.resonance_q > 0.0) {
            return Err(ctx(Error::config(format!(
                "resonance q must be positive, got {}",
                f.resonance_q
            ))));
        }
        f.cutoff_env.validate(self.duration_s()).map_err(ctx)?;
        self.gain_env.validate(self.duration_s()).map_err(ctx)?;
        Ok(())
    }

    fn sample_count(&self, sample_rate: u32) -> usize {
        (u64::from(sample_rate) * u64::from(self.duration_ms) / 1_000) as usize
    }

    /// Per-sample cutoff in Hz, linear in the cutoff envelope level.
    pub fn cutoff_series(&self, sample_rate: u32) -> Vec<f64> {
        let f = &self.filter;
        let nyquist = f64::from(sample_rate) / 2.0;
        // keep strictly inside (0, nyquist) for the filter contract
        let ceiling = nyquist * (1.0 - 1e-9);
        let floor = f.cutoff_floor.max(MIN_CUTOFF_HZ).min(ceiling);
        let peak = f.cutoff_peak.max(floor).min(ceiling);
        f.cutoff_env
            .render(self.sample_count(sample_rate), f64::from(sample_rate), self.duration_s())
            .into_iter()
            .map(|level| floor + (peak - floor) * level)
            .collect()
    }
}

/// Oscillator output (with optional phase modulation), bandlimited below
/// Nyquist and not normalized.
pub fn render_source(patch: &Patch, sample_rate: u32) -> Result<AudioBuffer> {
    patch.validate(sample_rate)?;
    let harmonics = max_harmonic(patch.f0, f64::from(sample_rate));
    let series = harmonic_series(patch.oscillator, patch.fm, harmonics);
    let samples = render_series(&series, patch.f0, sample_rate, patch.sample_count(sample_rate));
    Ok(AudioBuffer::new(sample_rate, samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub sample_rate: u32,
    pub target_dbfs: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            target_dbfs: TARGET_LEVEL_DBFS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub buffer: AudioBuffer,
    /// Achieved A-weighted RMS level (linear).
    pub a_weighted_rms: f64,
    /// Shortfall against the target when normalization had to be reduced to
    /// avoid clipping; 0 when the target was met.
    pub clip_deviation_db: f64,
}

/// Renders the full chain with the default settings.
pub fn render_patch(patch: &Patch) -> Result<Rendered> {
    render_patch_with(patch, &RenderSettings::default())
}

pub fn render_patch_with(patch: &Patch, settings: &RenderSettings) -> Result<Rendered> {
    let sr = settings.sample_rate;
    let source = render_source(patch, sr)?;
    let filtered = svf_lowpass(&source, &patch.cutoff_series(sr), patch.filter.resonance_q)?;
    let gain = patch
        .gain_env
        .render(filtered.len(), f64::from(sr), patch.duration_s());
    let shaped = AudioBuffer::new(
        sr,
        filtered.samples.iter().zip(&gain).map(|(x, g)| x * g).collect(),
    );

    let level = a_weighted_rms(&shaped)?;
    if level == 0.0 {
        return Err(Error::config(format!(
            "patch {} renders to silence and cannot be normalized",
            patch.id
        )));
    }
    let target = db_to_amplitude(settings.target_dbfs);
    let mut scale = target / level;
    let mut clip_deviation_db = 0.0;
    let peak = shaped.peak() * scale;
    if peak > 1.0 {
        scale /= peak;
        clip_deviation_db = amplitude_to_db(1.0 / peak);
    }
    let buffer = shaped.scaled(scale);
    let a_weighted_rms = a_weighted_rms(&buffer)?;
    Ok(Rendered {
        buffer,
        a_weighted_rms,
        clip_deviation_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn saw_patch() -> Patch {
        Patch {
            id: "saw".into(),
            oscillator: Oscillator::Sawtooth,
            f0: F0_HZ,
            fm: None,
            filter: FilterSettings {
                cutoff_floor: 3_000.0,
                cutoff_peak: 3_000.0,
                resonance_q: 0.707,
                cutoff_env: AdsrEnvelope::constant(),
            },
            gain_env: AdsrEnvelope::new(0.01, 0.1, 0.8, 0.1),
            duration_ms: DURATION_MS,
        }
    }

    #[test]
    fn renders_one_second() {
        let r = render_patch(&saw_patch()).unwrap();
        assert_eq!(r.buffer.len(), 44_100);
        assert!(r.buffer.peak() <= 1.0);
        assert_eq!(r.clip_deviation_db, 0.0);
        assert!((amplitude_to_db(r.a_weighted_rms) - TARGET_LEVEL_DBFS).abs() < 1e-9);
    }

    #[test]
    fn release_closes_the_note() {
        let r = render_patch(&saw_patch()).unwrap();
        assert!(r.buffer.samples.last().unwrap().abs() < 1e-3);
    }

    #[test]
    fn deterministic() {
        let a = render_patch(&saw_patch()).unwrap();
        let b = render_patch(&saw_patch()).unwrap();
        assert_eq!(a.buffer, b.buffer);
    }

    #[test]
    fn clipping_is_avoided_and_recorded() {
        let settings = RenderSettings {
            target_dbfs: 0.0,
            ..RenderSettings::default()
        };
        let r = render_patch_with(&saw_patch(), &settings).unwrap();
        assert!(r.buffer.peak() <= 1.0 + 1e-12);
        assert!(r.clip_deviation_db < 0.0);
    }

    #[test]
    fn rejects_invalid_patches() {
        let mut p = saw_patch();
        p.f0 = 441.0;
        assert!(p.validate(44_100).is_err());
        let mut p = saw_patch();
        p.duration_ms = 500;
        assert!(p.validate(44_100).is_err());
        let mut p = saw_patch();
        p.filter.cutoff_floor = 5_000.0;
        assert!(p.validate(44_100).is_err());
        let mut p = saw_patch();
        p.fm = Some(FmSettings { ratio: 0, index: 1.0 });
        assert!(p.validate(44_100).is_err());
    }

    #[test]
    fn cutoff_series_follows_envelope() {
        let mut p = saw_patch();
        p.filter.cutoff_floor = 0.0;
        p.filter.cutoff_peak = 4_000.0;
        p.filter.cutoff_env = AdsrEnvelope::new(0.5, 0.0, 1.0, 0.0);
        let c = p.cutoff_series(44_100);
        assert_eq!(c[0], MIN_CUTOFF_HZ);
        assert!((c[22_050] - 4_000.0).abs() < 1e-9);
        assert!((c[11_025] - (20.0 + 3_980.0 * 0.5)).abs() < 1e-9);
    }
}
