use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear attack-decay-sustain-release envelope.
///
/// The release segment is anchored to the end of the note: the level holds
/// at `sustain_level` until `duration - release_s` and then falls to zero at
/// `duration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdsrEnvelope {
    pub attack_s: f64,
    pub decay_s: f64,
    pub sustain_level: f64,
    pub release_s: f64,
}

impl AdsrEnvelope {
    pub const fn new(attack_s: f64, decay_s: f64, sustain_level: f64, release_s: f64) -> Self {
        Self {
            attack_s,
            decay_s,
            sustain_level,
            release_s,
        }
    }

    /// Envelope that sits at full level for the whole note.
    pub const fn constant() -> Self {
        Self::new(0.0, 0.0, 1.0, 0.0)
    }

    pub fn validate(&self, duration: f64) -> Result<()> {
        let segments = [
            ("attack", self.attack_s),
            ("decay", self.decay_s),
            ("release", self.release_s),
        ];
        for (name, value) in segments {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::config(format!(
                    "envelope {name} time must be a non-negative number, got {value}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.sustain_level) {
            return Err(Error::config(format!(
                "envelope sustain level must lie in [0, 1], got {}",
                self.sustain_level
            )));
        }
        let total = self.attack_s + self.decay_s + self.release_s;
        if total > duration + 1e-12 {
            return Err(Error::config(format!(
                "envelope segments ({total} s) exceed the note duration ({duration} s)"
            )));
        }
        Ok(())
    }

    /// Level at time `t` of a note lasting `duration` seconds.
    ///
    /// Assumes a validated envelope; `t` outside `[0, duration]` is clamped.
    pub fn value_at(&self, t: f64, duration: f64) -> f64 {
        let t = t.clamp(0.0, duration);
        let release_start = duration - self.release_s;
        if t >= release_start && self.release_s > 0.0 {
            return self.sustain_level * (duration - t) / self.release_s;
        }
        if t < self.attack_s {
            return t / self.attack_s;
        }
        let into_decay = t - self.attack_s;
        if into_decay < self.decay_s {
            return 1.0 + (self.sustain_level - 1.0) * into_decay / self.decay_s;
        }
        self.sustain_level
    }

    /// Samples the envelope at `sample_rate` for `len` samples.
    pub fn render(&self, len: usize, sample_rate: f64, duration: f64) -> Vec<f64> {
        (0..len)
            .map(|i| self.value_at(i as f64 / sample_rate, duration))
            .collect()
    }

    /// Shortest non-empty segment, used to bound per-sample slope.
    pub fn shortest_segment(&self) -> Option<f64> {
        [self.attack_s, self.decay_s, self.release_s]
            .into_iter()
            .filter(|s| *s > 0.0)
            .min_by(f64::total_cmp)
    }
}

/// Validated envelope level, see [`AdsrEnvelope::value_at`].
pub fn adsr_value(env: &AdsrEnvelope, t: f64, duration: f64) -> Result<f64> {
    env.validate(duration)?;
    if !(0.0..=duration).contains(&t) {
        return Err(Error::domain(format!(
            "time {t} lies outside the note [0, {duration}]"
        )));
    }
    Ok(env.value_at(t, duration))
}
