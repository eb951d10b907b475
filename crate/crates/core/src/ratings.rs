//! Dissimilarity ratings: trial schedules, participant exclusion and the
//! mean dissimilarity matrix.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Read, Write};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptors::format_float;
use crate::error::{Error, Result};

pub const MAX_RATING: f64 = 9.0;
pub const RATING_STEP: f64 = 0.5;

/// True when `rating` lies on the 0..=9 slider grid in steps of 0.5.
pub fn is_valid_rating(rating: f64) -> bool {
    rating.is_finite() && (0.0..=MAX_RATING).contains(&rating) && (rating / RATING_STEP).fract() == 0.0
}

/// One submitted trial, as exported by the experiment service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub participant_id: String,
    pub session_id: String,
    pub trial_index: usize,
    /// Stimulus ids in presentation order.
    pub stim_a: String,
    pub stim_b: String,
    pub rating: f64,
    pub replay_count_a: u32,
    pub replay_count_b: u32,
    pub submitted_at: DateTime<Utc>,
    /// Set by the service for sessions it already knows to be unusable
    /// (self-reported hearing issues, failed screening).
    #[serde(default)]
    pub excluded_flag: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_reason: Option<String>,
}

impl RatingRecord {
    pub fn is_identical_pair(&self) -> bool {
        self.stim_a == self.stim_b
    }
}

/// One scheduled trial, as stimulus indices in presentation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trial {
    pub a: usize,
    pub b: usize,
}

/// Number of trials per session for `n` stimuli: every unordered pair once
/// plus one identical pair per stimulus.
pub fn trial_count(n: usize) -> usize {
    n * (n - 1) / 2 + n
}

/// Seeded trial schedule: each unordered pair `{i, j}` once with a random
/// presentation direction, each identical pair `(i, i)` once, all shuffled.
pub fn pair_schedule(n: usize, seed: u64) -> Result<Vec<Trial>> {
    if n < 2 {
        return Err(Error::config(format!("a schedule needs at least 2 stimuli, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(trial_count(n));
    for i in 0..n {
        for j in i + 1..n {
            trials.push(if rng.random_bool(0.5) {
                Trial { a: j, b: i }
            } else {
                Trial { a: i, b: j }
            });
        }
    }
    trials.extend((0..n).map(|i| Trial { a: i, b: i }));
    trials.shuffle(&mut rng);
    Ok(trials)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExclusionPolicy {
    /// Participants with more identical-pair violations than this are
    /// excluded.
    pub max_control_violations: usize,
    /// An identical pair rated at or above this counts as a violation.
    pub violation_rating: f64,
}

impl Default for ExclusionPolicy {
    fn default() -> Self {
        Self {
            max_control_violations: 2,
            violation_rating: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum ExclusionReason {
    /// Flagged at collection time (hearing issues, failed screening).
    Flagged { detail: String },
    Incomplete { submitted: usize, expected: usize },
    /// Too many identical pairs rated as different.
    Control { violations: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Exclusion {
    Included,
    Excluded(ExclusionReason),
}

impl Exclusion {
    pub fn is_included(&self) -> bool {
        matches!(self, Exclusion::Included)
    }
}

/// Applies the exclusion rules to one participant's complete record set.
pub fn exclusion_check(records: &[RatingRecord], n_stimuli: usize, policy: &ExclusionPolicy) -> Exclusion {
    if let Some(flagged) = records.iter().find(|r| r.excluded_flag) {
        return Exclusion::Excluded(ExclusionReason::Flagged {
            detail: flagged
                .exclusion_reason
                .clone()
                .unwrap_or_else(|| "flagged at collection".into()),
        });
    }
    let expected = trial_count(n_stimuli);
    let indices: BTreeSet<usize> = records.iter().map(|r| r.trial_index).collect();
    let complete = records.len() == expected
        && indices.len() == expected
        && indices.iter().next_back() == Some(&(expected - 1));
    if !complete {
        return Exclusion::Excluded(ExclusionReason::Incomplete {
            submitted: indices.len(),
            expected,
        });
    }
    let violations = records
        .iter()
        .filter(|r| r.is_identical_pair() && r.rating >= policy.violation_rating)
        .count();
    if violations > policy.max_control_violations {
        Exclusion::Excluded(ExclusionReason::Control { violations })
    } else {
        Exclusion::Included
    }
}

/// Symmetric matrix of mean dissimilarities with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityMatrix {
    pub ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl DissimilarityMatrix {
    pub fn new(ids: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { ids, values };
        m.validate()?;
        Ok(m)
    }

    /// Matrix with generated ids `s0, s1, ...`.
    pub fn from_values(values: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..values.len()).map(|i| format!("s{i}")).collect();
        Self::new(ids, values)
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        if self.values.len() != n || self.values.iter().any(|r| r.len() != n) {
            return Err(Error::data(format!("dissimilarity matrix is not {n}x{n}")));
        }
        for i in 0..n {
            if self.values[i][i] != 0.0 {
                return Err(Error::data(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..n {
                let v = self.values[i][j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::data(format!("entry ({i}, {j}) = {v} is not a non-negative number")));
                }
                if v != self.values[j][i] {
                    return Err(Error::data(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    /// Upper-triangle pairs `(i, j)`, `i < j`, in row-major order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }

    /// Upper-triangle values in [`Self::pairs`] order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        self.pairs().into_iter().map(|(i, j)| self.values[i][j]).collect()
    }

    /// Header row of ids, then one row of values per stimulus.
    pub fn write_csv<W: Write>(&self, mut out: W, preamble: &[String]) -> Result<()> {
        for line in preamble {
            writeln!(out, "# {line}").map_err(|e| Error::io("<matrix csv>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.ids)?;
        for row in &self.values {
            w.write_record(row.iter().map(|v| format_float(*v)))?;
        }
        w.flush().map_err(|e| Error::io("<matrix csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let ids: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut values = Vec::new();
        for rec in r.records() {
            let row = rec?
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::data(format!("bad number {s:?} in matrix csv")))
                })
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        Self::new(ids, values)
    }
}

/// Mean of every included rating of each unordered pair, regardless of
/// presentation direction. Identical-pair ratings are a control and never
/// enter the matrix.
pub fn mean_matrix<'a>(
    records: impl IntoIterator<Item = &'a RatingRecord>,
    ids: &[String],
) -> Result<DissimilarityMatrix> {
    let n = ids.len();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut sums = vec![vec![0.0; n]; n];
    let mut counts = vec![vec![0usize; n]; n];
    for r in records {
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::data(format!("rating refers to unknown stimulus {id:?}")))
        };
        let (a, b) = (lookup(&r.stim_a)?, lookup(&r.stim_b)?);
        if a == b {
            continue;
        }
        let (i, j) = (a.min(b), a.max(b));
        sums[i][j] += r.rating;
        counts[i][j] += 1;
    }
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if counts[i][j] == 0 {
                return Err(Error::data(format!(
                    "no included ratings for pair ({}, {})",
                    ids[i], ids[j]
                )));
            }
            let mean = sums[i][j] / counts[i][j] as f64;
            values[i][j] = mean;
            values[j][i] = mean;
        }
    }
    DissimilarityMatrix::new(ids.to_vec(), values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantStatus {
    pub participant_id: String,
    pub trials: usize,
    pub exclusion: Exclusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub matrix: DissimilarityMatrix,
    pub participants: Vec<ParticipantStatus>,
}

impl Aggregate {
    pub fn included(&self) -> usize {
        self.participants.iter().filter(|p| p.exclusion.is_included()).count()
    }
}

/// Groups records by participant, applies the exclusion policy and averages
/// the included participants' ratings.
pub fn aggregate(records: &[RatingRecord], ids: &[String], policy: &ExclusionPolicy) -> Result<Aggregate> {
    for r in records {
        if !is_valid_rating(r.rating) {
            return Err(Error::data(format!(
                "participant {} trial {}: rating {} is off the 0-9 half-step grid",
                r.participant_id, r.trial_index, r.rating
            )));
        }
    }
    let mut by_participant: BTreeMap<&str, Vec<RatingRecord>> = BTreeMap::new();
    for r in records {
        by_participant.entry(&r.participant_id).or_default().push(r.clone());
    }
    let mut participants = Vec::new();
    let mut included = Vec::new();
    for (pid, recs) in &by_participant {
        let exclusion = exclusion_check(recs, ids.len(), policy);
        if exclusion.is_included() {
            included.extend(recs.iter());
        }
        participants.push(ParticipantStatus {
            participant_id: pid.to_string(),
            trials: recs.len(),
            exclusion,
        });
    }
    if !participants.iter().any(|p| p.exclusion.is_included()) {
        return Err(Error::data(format!(
            "none of the {} participants passed the exclusion rules",
            participants.len()
        )));
    }
    let matrix = mean_matrix(included, ids)?;
    Ok(Aggregate { matrix, participants })
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<RatingRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<ratings jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("ratings line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[RatingRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<ratings jsonl>", e))?;
    }
    Ok(())
}
