//! STFT-based acoustic descriptors, averaged over frames.

mod attack;
mod harmonic;
mod spectral;
mod stft;

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use attack::{attack_time_from_envelope, log_attack_time, rms_envelope, MIN_ATTACK_S};
pub use harmonic::{harmonic_amplitudes, odd_even_ratio, tristimulus, HarmonicSearch, ODD_EVEN_CAP};
pub use spectral::{
    local_maxima, spectral_centroid, spectral_complexity, spectral_decrease, spectral_flux,
    spectral_kurtosis, spectral_rolloff, spectral_skewness, spectral_spread,
};
pub use stft::{frame_count, hann, stft, stft_with, Spectrogram, HOP_SIZE, WINDOW_SIZE};

use crate::error::{Error, Result};
use crate::synth::AudioBuffer;

/// Canonical descriptor names, in column order. The first nine are the
/// interpretation set; the rest are candidates for collinearity screening.
pub const DESCRIPTOR_NAMES: [&str; 12] = [
    "spectral_complexity",
    "spectral_flux",
    "log_attack_time",
    "tristimulus_3",
    "spectral_decrease",
    "tristimulus_2",
    "spectral_kurtosis",
    "odd_even_ratio",
    "spectral_centroid",
    "spectral_rolloff",
    "spectral_spread",
    "spectral_skewness",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorConfig {
    pub f0: f64,
    pub rolloff_fraction: f64,
    pub complexity_threshold: f64,
    /// L2-normalize frames before differencing for spectral flux.
    pub flux_normalized: bool,
    /// Odd-even ratio over squared amplitudes rather than amplitudes.
    pub odd_even_energy: bool,
    pub harmonic_tolerance: f64,
    pub harmonic_interpolation: bool,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            f0: crate::F0_HZ,
            rolloff_fraction: 0.85,
            complexity_threshold: 0.005,
            flux_normalized: true,
            odd_even_energy: true,
            harmonic_tolerance: 0.2,
            harmonic_interpolation: true,
        }
    }
}

impl DescriptorConfig {
    pub fn harmonic_search(&self) -> HarmonicSearch {
        HarmonicSearch {
            f0: self.f0,
            tolerance: self.harmonic_tolerance,
            interpolate: self.harmonic_interpolation,
        }
    }
}

/// Per-stimulus descriptor set, each a mean over frames (log attack time is
/// computed once per buffer).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorVector {
    pub spectral_complexity: f64,
    pub spectral_flux: f64,
    pub log_attack_time: f64,
    pub tristimulus_3: f64,
    pub spectral_decrease: f64,
    pub tristimulus_2: f64,
    pub spectral_kurtosis: f64,
    pub odd_even_ratio: f64,
    pub spectral_centroid: f64,
    pub spectral_rolloff: f64,
    pub spectral_spread: f64,
    pub spectral_skewness: f64,
}

impl DescriptorVector {
    /// Values in [`DESCRIPTOR_NAMES`] order.
    pub fn values(&self) -> [f64; 12] {
        [
            self.spectral_complexity,
            self.spectral_flux,
            self.log_attack_time,
            self.tristimulus_3,
            self.spectral_decrease,
            self.tristimulus_2,
            self.spectral_kurtosis,
            self.odd_even_ratio,
            self.spectral_centroid,
            self.spectral_rolloff,
            self.spectral_spread,
            self.spectral_skewness,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        DESCRIPTOR_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values()[i])
    }

    fn from_values(v: [f64; 12]) -> Self {
        Self {
            spectral_complexity: v[0],
            spectral_flux: v[1],
            log_attack_time: v[2],
            tristimulus_3: v[3],
            spectral_decrease: v[4],
            tristimulus_2: v[5],
            spectral_kurtosis: v[6],
            odd_even_ratio: v[7],
            spectral_centroid: v[8],
            spectral_rolloff: v[9],
            spectral_spread: v[10],
            spectral_skewness: v[11],
        }
    }
}

#[derive(Default)]
struct Mean {
    sum: f64,
    count: usize,
}

impl Mean {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }

    fn push_opt(&mut self, x: Option<f64>) {
        if let Some(x) = x {
            self.push(x);
        }
    }

    fn value(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Frame-mean descriptors of a spectrogram, excluding degenerate frames
/// from each mean: silent frames from every spectral-shape mean, zero-spread
/// frames from the moment ratios, harmonic-free frames from the harmonic
/// descriptors, and frame 0 from flux (it has no predecessor).
pub fn frame_means(spec: &Spectrogram, cfg: &DescriptorConfig) -> [f64; 12] {
    let f = &spec.bin_freqs;
    let search = cfg.harmonic_search();
    let mut centroid = Mean::default();
    let mut rolloff = Mean::default();
    let mut spread = Mean::default();
    let mut decrease = Mean::default();
    let mut complexity = Mean::default();
    let mut kurtosis = Mean::default();
    let mut skewness = Mean::default();
    let mut t2 = Mean::default();
    let mut t3 = Mean::default();
    let mut odd_even = Mean::default();

    for frame in &spec.frames {
        if frame.iter().all(|&m| m == 0.0) {
            continue;
        }
        centroid.push(spectral_centroid(frame, f));
        rolloff.push(spectral_rolloff(frame, f, cfg.rolloff_fraction));
        spread.push(spectral_spread(frame, f));
        decrease.push(spectral_decrease(frame));
        complexity.push(spectral_complexity(frame, cfg.complexity_threshold) as f64);
        kurtosis.push_opt(spectral_kurtosis(frame, f));
        skewness.push_opt(spectral_skewness(frame, f));
        let amps = harmonic_amplitudes(frame, f, &search);
        if let Some((_, tri2, tri3)) = tristimulus(&amps) {
            t2.push(tri2);
            t3.push(tri3);
            odd_even.push(odd_even_ratio(&amps, cfg.odd_even_energy));
        }
    }
    let mut flux = Mean::default();
    for x in spectral_flux(&spec.frames, cfg.flux_normalized).into_iter().skip(1) {
        flux.push(x);
    }

    [
        complexity.value(),
        flux.value(),
        f64::NAN, // log attack time is filled in by the caller
        t3.value(),
        decrease.value(),
        t2.value(),
        kurtosis.value(),
        odd_even.value(),
        centroid.value(),
        rolloff.value(),
        spread.value(),
        skewness.value(),
    ]
}

pub fn extract(buffer: &AudioBuffer, cfg: &DescriptorConfig) -> Result<DescriptorVector> {
    let spec = stft(buffer)?;
    let mut values = frame_means(&spec, cfg);
    values[2] = log_attack_time(buffer)?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::data(format!(
            "descriptor {} is not finite ({})",
            DESCRIPTOR_NAMES[i], values[i]
        )));
    }
    Ok(DescriptorVector::from_values(values))
}

/// Extracts every buffer in parallel, keeping input order.
pub fn extract_all(buffers: &[AudioBuffer], cfg: &DescriptorConfig) -> Result<Vec<DescriptorVector>> {
    buffers.par_iter().map(|b| extract(b, cfg)).collect()
}

/// Descriptor table keyed by stimulus id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub names: Vec<String>,
    /// `rows[i][j]`: descriptor `names[j]` of stimulus `ids[i]`.
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn from_vectors(ids: Vec<String>, vectors: &[DescriptorVector]) -> Self {
        Self {
            ids,
            names: DESCRIPTOR_NAMES.iter().map(|s| s.to_string()).collect(),
            rows: vectors.iter().map(|v| v.values().to_vec()).collect(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Writes `id,<names...>` then one row per stimulus. Lines starting with
    /// `#` before the header are written verbatim from `preamble`.
    pub fn write_csv<W: Write>(&self, mut out: W, preamble: &[String]) -> Result<()> {
        for line in preamble {
            writeln!(out, "# {line}").map_err(|e| Error::io("<features csv>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| format_float(*v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<features csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(input);
        let header = r.headers()?.clone();
        if header.get(0) != Some("id") {
            return Err(Error::data("features csv must start with an `id` column"));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::data(format!("bad number {s:?} in features csv")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { ids, names, rows })
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_resolvable() {
        let v = DescriptorVector::from_values(std::array::from_fn(|i| i as f64));
        for (i, name) in DESCRIPTOR_NAMES.iter().enumerate() {
            assert_eq!(v.get(name), Some(i as f64));
        }
        assert_eq!(v.get("mfcc_1"), None);
    }

    #[test]
    fn csv_round_trip() {
        let vectors = [
            DescriptorVector::from_values(std::array::from_fn(|i| i as f64 * 0.1)),
            DescriptorVector::from_values(std::array::from_fn(|i| -(i as f64) / 3.0)),
        ];
        let table = FeatureTable::from_vectors(vec!["a".into(), "b".into()], &vectors);
        let mut buf = Vec::new();
        table.write_csv(&mut buf, &["seed=1".into()]).unwrap();
        let back = FeatureTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn silence_cannot_be_described() {
        let silent = AudioBuffer::new(44_100, vec![0.0; 44_100]);
        assert!(extract(&silent, &DescriptorConfig::default()).is_err());
    }
}
