//! Versioned stimulus bank: the list of patches rendered for a study.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{
    render_patch_with, AdsrEnvelope, FilterSettings, FmSettings, Oscillator, Patch, RenderSettings,
    Rendered, DURATION_MS,
};
use crate::F0_HZ;

pub const BANK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusBank {
    pub version: u32,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub render: RenderSettings,
    pub patches: Vec<Patch>,
}

impl StimulusBank {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bank: StimulusBank = serde_json::from_str(&text)?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != BANK_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported bank version {} (expected {BANK_FORMAT_VERSION})",
                self.version
            )));
        }
        if self.patches.len() < 2 {
            return Err(Error::config("a bank needs at least two patches"));
        }
        let mut ids: Vec<&str> = self.patches.iter().map(|p| p.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(format!("duplicate patch id {}", w[0])));
        }
        for p in &self.patches {
            if !p.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::config(format!(
                    "patch id {:?} may only contain ASCII letters, digits, '_' and '-'",
                    p.id
                )));
            }
            p.validate(self.render.sample_rate)?;
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        self.patches.iter().map(|p| p.id.clone()).collect()
    }

    pub fn patch(&self, id: &str) -> Option<&Patch> {
        self.patches.iter().find(|p| p.id == id)
    }

    /// Renders every patch, in bank order.
    pub fn render_all(&self) -> Result<Vec<Rendered>> {
        self.patches
            .par_iter()
            .map(|p| render_patch_with(p, &self.render))
            .collect()
    }

    /// The shipped 15-stimulus bank: sawtooth and pulse sources, with and
    /// without integer-ratio phase modulation, under static, slowly opening
    /// and quickly opening filter envelopes.
    pub fn study_default() -> Self {
        let patches = vec![
            patch("saw_static", SAW, None, static_cutoff(2_000.0, 0.707)),
            patch("saw_slow", SAW, None, swept(slow(), 4_000.0, 2.0)),
            patch("saw_fast", SAW, None, swept(fast(), 4_000.0, 2.0)),
            patch("pulse50_static", pulse(0.5), None, static_cutoff(2_000.0, 0.707)),
            patch("pulse50_slow", pulse(0.5), None, swept(slow(), 5_000.0, 1.0)),
            patch("pulse25_fast", pulse(0.25), None, swept(fast(), 5_000.0, 1.0)),
            patch("saw_fm1_static", SAW, fm(1, 0.5), static_cutoff(3_000.0, 1.0)),
            patch("saw_fm2_slow", SAW, fm(2, 1.0), swept(slow(), 6_000.0, 2.0)),
            patch("saw_fm3_fast", SAW, fm(3, 2.0), swept(fast(), 6_000.0, 4.0)),
            patch("pulse50_fm1_fast", pulse(0.5), fm(1, 1.0), swept(fast(), 3_000.0, 4.0)),
            patch("pulse50_fm2_static", pulse(0.5), fm(2, 2.0), static_cutoff(4_000.0, 2.0)),
            patch("pulse25_fm3_slow", pulse(0.25), fm(3, 0.5), swept(slow(), 7_000.0, 1.0)),
            patch("saw_fm2_static_bright", SAW, fm(2, 2.0), static_cutoff(7_000.0, 0.707)),
            patch("pulse50_fm1_slow", pulse(0.5), fm(1, 2.0), swept(slow(), 4_000.0, 0.707)),
            patch("saw_fm3_static_dark", SAW, fm(3, 1.0), static_cutoff(1_200.0, 4.0)),
        ];
        StimulusBank {
            version: BANK_FORMAT_VERSION,
            description: "sawtooth/pulse sources x {no FM, FM ratio 1-3, index 0.5-2} x \
                          {static, slow-attack, fast-attack} cutoff envelopes"
                .into(),
            render: RenderSettings::default(),
            patches,
        }
    }
}

const SAW: Oscillator = Oscillator::Sawtooth;

const GAIN_ENV: AdsrEnvelope = AdsrEnvelope::new(0.01, 0.1, 0.8, 0.1);

fn pulse(duty: f64) -> Oscillator {
    Oscillator::Pulse { duty }
}

fn fm(ratio: u32, index: f64) -> Option<FmSettings> {
    Some(FmSettings { ratio, index })
}

fn slow() -> AdsrEnvelope {
    AdsrEnvelope::new(0.4, 0.2, 0.6, 0.1)
}

fn fast() -> AdsrEnvelope {
    AdsrEnvelope::new(0.01, 0.15, 0.5, 0.1)
}

fn static_cutoff(cutoff: f64, q: f64) -> FilterSettings {
    FilterSettings {
        cutoff_floor: cutoff,
        cutoff_peak: cutoff,
        resonance_q: q,
        cutoff_env: AdsrEnvelope::constant(),
    }
}

fn swept(env: AdsrEnvelope, peak: f64, q: f64) -> FilterSettings {
    FilterSettings {
        cutoff_floor: 0.0,
        cutoff_peak: peak,
        resonance_q: q,
        cutoff_env: env,
    }
}

fn patch(id: &str, oscillator: Oscillator, fm: Option<FmSettings>, filter: FilterSettings) -> Patch {
    Patch {
        id: id.into(),
        oscillator,
        f0: F0_HZ,
        fm,
        filter,
        gain_env: GAIN_ENV,
        duration_ms: DURATION_MS,
    }
}
