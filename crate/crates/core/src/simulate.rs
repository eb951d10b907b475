//! Simulated raters: a linear distance-to-rating map with Gaussian noise and
//! slider-grid quantization, standing in for human listeners.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::descriptors::FeatureTable;
use crate::error::{Error, Result};
use crate::ratings::{pair_schedule, DissimilarityMatrix, RatingRecord, MAX_RATING, RATING_STEP};

/// Where the simulated perceptual distances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentSource {
    /// Seeded uniform coordinates in `[-1, 1]^dims`.
    Planted { dims: usize },
    /// Explicit coordinates, one row per stimulus.
    Coordinates { coords: Vec<Vec<f64>> },
    /// Euclidean distance between z-scored descriptor columns.
    Descriptors { names: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedRaterSpec {
    pub participants: usize,
    pub noise_sigma: f64,
    /// Rating given to the largest latent distance before noise.
    #[serde(default = "default_scale_max")]
    pub scale_max: f64,
    pub latent: LatentSource,
}

fn default_scale_max() -> f64 {
    MAX_RATING
}

impl SimulatedRaterSpec {
    pub fn planted(participants: usize, noise_sigma: f64, dims: usize) -> Self {
        Self {
            participants,
            noise_sigma,
            scale_max: MAX_RATING,
            latent: LatentSource::Planted { dims },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.participants == 0 {
            return Err(Error::config("simulation needs at least one participant"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.scale_max > 0.0 && self.scale_max <= MAX_RATING) {
            return Err(Error::config(format!(
                "scale_max must lie in (0, {MAX_RATING}], got {}",
                self.scale_max
            )));
        }
        match &self.latent {
            LatentSource::Planted { dims } if *dims == 0 => {
                Err(Error::config("planted latent space needs dims >= 1"))
            }
            LatentSource::Descriptors { names } if names.is_empty() => {
                Err(Error::config("descriptor latent space needs at least one descriptor"))
            }
            _ => Ok(()),
        }
    }
}

/// Seeded uniform coordinates in `[-1, 1]^dims`.
pub fn planted_coordinates(n: usize, dims: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0070_6c61_6e74_6564);
    (0..n)
        .map(|_| (0..dims).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect()
}

/// Euclidean distances between coordinate rows.
pub fn coordinate_distances(ids: &[String], coords: &[Vec<f64>]) -> Result<DissimilarityMatrix> {
    if coords.len() != ids.len() {
        return Err(Error::config(format!(
            "{} coordinate rows for {} stimuli",
            coords.len(),
            ids.len()
        )));
    }
    let dims = coords.first().map_or(0, Vec::len);
    if dims == 0 || coords.iter().any(|r| r.len() != dims || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::config("latent coordinates must be finite and rectangular"));
    }
    let n = ids.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = coords[i]
                .iter()
                .zip(&coords[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            values[i][j] = d;
            values[j][i] = d;
        }
    }
    DissimilarityMatrix::new(ids.to_vec(), values)
}

/// Distances in the z-scored subspace of the named descriptors. Constant
/// columns contribute nothing.
pub fn descriptor_distances(table: &FeatureTable, names: &[String]) -> Result<DissimilarityMatrix> {
    let n = table.ids.len();
    let mut coords = vec![Vec::with_capacity(names.len()); n];
    for name in names {
        let col = table
            .column(name)
            .ok_or_else(|| Error::config(format!("unknown descriptor {name} in latent source")))?;
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for (row, v) in coords.iter_mut().zip(&col) {
            row.push(if sd > 0.0 { (v - mean) / sd } else { 0.0 });
        }
    }
    coordinate_distances(&table.ids, &coords)
}

/// Resolves the latent distances for `ids`; `features` is required for a
/// descriptor source.
pub fn latent_distances(
    spec: &SimulatedRaterSpec,
    ids: &[String],
    features: Option<&FeatureTable>,
    seed: u64,
) -> Result<DissimilarityMatrix> {
    match &spec.latent {
        LatentSource::Planted { dims } => {
            coordinate_distances(ids, &planted_coordinates(ids.len(), *dims, seed))
        }
        LatentSource::Coordinates { coords } => coordinate_distances(ids, coords),
        LatentSource::Descriptors { names } => {
            let table = features
                .ok_or_else(|| Error::config("descriptor latent source needs a feature table"))?;
            if table.ids != ids {
                return Err(Error::config("feature table ids do not match the stimulus ids"));
            }
            descriptor_distances(table, names)
        }
    }
}

/// Rounds to the nearest slider step and clamps to the scale.
pub fn quantize(x: f64) -> f64 {
    ((x / RATING_STEP).round() * RATING_STEP).clamp(0.0, MAX_RATING)
}

fn participant_seed(seed: u64, p: usize) -> u64 {
    seed.wrapping_add((p as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F))
}

fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).single().expect("valid epoch")
}

/// One complete session per simulated participant, in the export schema.
/// Timestamps are synthetic and fixed by the participant and trial index.
pub fn simulate_ratings(
    spec: &SimulatedRaterSpec,
    latent: &DissimilarityMatrix,
    seed: u64,
) -> Result<Vec<RatingRecord>> {
    spec.validate()?;
    latent.validate()?;
    let n = latent.n();
    let max = latent.upper_triangle().into_iter().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::config("latent distances are all zero"));
    }
    let scale = spec.scale_max / max;
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::config(format!("noise distribution: {e}")))?;

    let mut records = Vec::with_capacity(spec.participants * crate::ratings::trial_count(n));
    for p in 0..spec.participants {
        let pseed = participant_seed(seed, p);
        let schedule = pair_schedule(n, pseed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(pseed ^ 0x006e_6f69_7365);
        let participant_id = format!("sim-{:03}", p + 1);
        let session_id = format!("{participant_id}-s1");
        let start = epoch() + Duration::hours(p as i64);
        for (t, trial) in schedule.iter().enumerate() {
            let e: f64 = noise.sample(&mut rng);
            let rating = if trial.a == trial.b {
                quantize(e.max(0.0))
            } else {
                quantize(scale * latent.get(trial.a, trial.b) + e)
            };
            records.push(RatingRecord {
                participant_id: participant_id.clone(),
                session_id: session_id.clone(),
                trial_index: t,
                stim_a: latent.ids[trial.a].clone(),
                stim_b: latent.ids[trial.b].clone(),
                rating,
                replay_count_a: 1,
                replay_count_b: 1,
                submitted_at: start + Duration::seconds(5 * (t as i64 + 1)),
                excluded_flag: false,
                exclusion_reason: None,
            });
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratings::{aggregate, is_valid_rating, ExclusionPolicy};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn quantize_snaps_and_clamps() {
        assert_eq!(quantize(3.24), 3.0);
        assert_eq!(quantize(3.26), 3.5);
        assert_eq!(quantize(-2.0), 0.0);
        assert_eq!(quantize(11.0), 9.0);
    }

    #[test]
    fn noiseless_mean_matrix_tracks_latent_distances() {
        let ids = ids(8);
        let spec = SimulatedRaterSpec::planted(3, 0.0, 4);
        let latent = latent_distances(&spec, &ids, None, 5).unwrap();
        let records = simulate_ratings(&spec, &latent, 5).unwrap();
        assert_eq!(records.len(), 3 * 36);
        assert!(records.iter().all(|r| is_valid_rating(r.rating)));
        let agg = aggregate(&records, &ids, &ExclusionPolicy::default()).unwrap();
        assert_eq!(agg.included(), 3);
        let max = latent.upper_triangle().into_iter().fold(0.0, f64::max);
        for (i, j) in latent.pairs() {
            let expect = 9.0 * latent.get(i, j) / max;
            assert!((agg.matrix.get(i, j) - expect).abs() <= 0.25 + 1e-12);
        }
    }

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let ids = ids(6);
        let spec = SimulatedRaterSpec::planted(4, 1.0, 2);
        let latent = latent_distances(&spec, &ids, None, 1).unwrap();
        let a = simulate_ratings(&spec, &latent, 9).unwrap();
        assert_eq!(a, simulate_ratings(&spec, &latent, 9).unwrap());
        assert_ne!(a, simulate_ratings(&spec, &latent, 10).unwrap());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(SimulatedRaterSpec::planted(0, 1.0, 2).validate().is_err());
        assert!(SimulatedRaterSpec::planted(1, -0.5, 2).validate().is_err());
        assert!(SimulatedRaterSpec::planted(1, 0.5, 0).validate().is_err());
    }

    #[test]
    fn descriptor_latent_space_uses_zscores() {
        let table = FeatureTable {
            ids: ids(3),
            names: vec!["a".into(), "b".into()],
            rows: vec![vec![0.0, 5.0], vec![1.0, 5.0], vec![2.0, 5.0]],
        };
        let d = descriptor_distances(&table, &["a".into(), "b".into()]).unwrap();
        let sd = (2.0f64 / 3.0).sqrt();
        assert!((d.get(0, 2) - 2.0 / sd).abs() < 1e-12);
        assert!(descriptor_distances(&table, &["zzz".into()]).is_err());
    }
}
