//! Non-metric multidimensional scaling (Kruskal stress-1 with monotone
//! regression), classical scaling, scree curves and Procrustes alignment.

mod classical;
mod isotonic;
mod procrustes;

pub use classical::{classical_mds, double_center, symmetric_eigen};
pub use isotonic::{isotonic_fit, pav, regression_order, stress1};
pub use procrustes::{procrustes_align, Procrustes};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratings::DissimilarityMatrix;
use crate::stats::pearson;

const INITIAL_STEP: f64 = 0.2;
const STEP_GROWTH: f64 = 1.05;
const MIN_STEP: f64 = 1e-12;

/// Which pair of vectors the reported R² correlates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RSquared {
    /// Original dissimilarities against final disparities.
    #[default]
    DissimilarityDisparity,
    /// Final disparities against final distances.
    DisparityDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdsConfig {
    pub dims: usize,
    pub max_iters: usize,
    pub stress_tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub r_squared: RSquared,
}

impl Default for MdsConfig {
    fn default() -> Self {
        Self {
            dims: 4,
            max_iters: 500,
            stress_tol: 1e-7,
            restarts: 20,
            seed: 0,
            r_squared: RSquared::default(),
        }
    }
}

impl MdsConfig {
    pub fn with_dims(dims: usize, seed: u64) -> Self {
        Self {
            dims,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.dims == 0 || self.dims >= n {
            return Err(Error::config(format!(
                "MDS of {n} stimuli needs 1 <= dims < {n}, got {}",
                self.dims
            )));
        }
        if self.restarts == 0 {
            return Err(Error::config("MDS needs at least one restart"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("MDS needs max_iters >= 1"));
        }
        if !(self.stress_tol > 0.0 && self.stress_tol.is_finite()) {
            return Err(Error::config(format!(
                "stress_tol must be positive, got {}",
                self.stress_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdsSolution {
    pub ids: Vec<String>,
    pub dims: usize,
    /// One row per stimulus.
    pub coords: Vec<Vec<f64>>,
    pub stress1: f64,
    /// R² under the configured convention.
    pub r_squared: f64,
    /// R² under the other convention.
    pub r_squared_alternative: f64,
    /// Upper-triangle pairs in row-major order.
    pub pairs: Vec<(usize, usize)>,
    pub dissimilarities: Vec<f64>,
    pub disparities: Vec<f64>,
    pub distances: Vec<f64>,
    pub iterations_used: usize,
    /// `0` is the classical-scaling start, `1..restarts` are random starts
    /// and higher indices are caller-supplied warm starts.
    pub restart_index: usize,
    pub converged: bool,
    pub config: MdsConfig,
}

impl MdsSolution {
    pub fn coords_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.coords.len(), self.dims, |i, k| self.coords[i][k])
    }

    /// Coordinates of one dimension across stimuli.
    pub fn dimension(&self, k: usize) -> Vec<f64> {
        self.coords.iter().map(|row| row[k]).collect()
    }
}

/// Outcome of one descent from one starting configuration.
#[derive(Debug, Clone)]
pub struct Descent {
    pub coords: DMatrix<f64>,
    pub stress1: f64,
    pub distances: Vec<f64>,
    pub disparities: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Stress after the start and after every accepted step.
    pub accepted_stress: Vec<f64>,
}

fn pair_distances(x: &DMatrix<f64>, pairs: &[(usize, usize)]) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(i, j)| {
            let mut sum = 0.0;
            for k in 0..x.ncols() {
                let diff = x[(i, k)] - x[(j, k)];
                sum += diff * diff;
            }
            sum.sqrt()
        })
        .collect()
}

/// Centre columns and scale to unit root-mean-square point norm.
fn normalize(x: &mut DMatrix<f64>) -> bool {
    let n = x.nrows();
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let norm = x.norm();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    *x *= (n as f64).sqrt() / norm;
    true
}

struct State {
    x: DMatrix<f64>,
    distances: Vec<f64>,
    disparities: Vec<f64>,
    stress: f64,
}

fn evaluate(x: DMatrix<f64>, dissims: &[f64], pairs: &[(usize, usize)]) -> Result<State> {
    let distances = pair_distances(&x, pairs);
    let disparities = isotonic_fit(dissims, &distances)?;
    let stress = stress1(&distances, &disparities)?;
    Ok(State {
        x,
        distances,
        disparities,
        stress,
    })
}

fn gradient(state: &State, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let x = &state.x;
    let mut g = DMatrix::<f64>::zeros(x.nrows(), x.ncols());
    let t_star: f64 = state.distances.iter().map(|d| d * d).sum();
    if state.stress == 0.0 {
        return g;
    }
    let s2 = state.stress * state.stress;
    let norm = 1.0 / (state.stress * t_star);
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let d = state.distances[p];
        if d == 0.0 {
            continue;
        }
        let coeff = norm * ((d - state.disparities[p]) - s2 * d) / d;
        for k in 0..x.ncols() {
            let delta = coeff * (x[(i, k)] - x[(j, k)]);
            g[(i, k)] += delta;
            g[(j, k)] -= delta;
        }
    }
    g
}

/// Adaptive-step gradient descent on stress-1 from one starting
/// configuration. `dissims` is aligned with `pairs`.
pub fn descend(
    dissims: &[f64],
    pairs: &[(usize, usize)],
    init: &DMatrix<f64>,
    cfg: &MdsConfig,
) -> Result<Descent> {
    let mut x = init.clone();
    if !normalize(&mut x) {
        return Err(Error::domain("starting configuration has all points coincident"));
    }
    let mut state = evaluate(x, dissims, pairs)?;
    let mut accepted_stress = vec![state.stress];
    let mut step = INITIAL_STEP;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        if state.stress == 0.0 {
            converged = true;
            break;
        }
        let g = gradient(&state, pairs);
        let g_norm = g.norm();
        if g_norm == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut candidate = &state.x - &g * (step * state.x.norm() / g_norm);
        let trial = if normalize(&mut candidate) {
            Some(evaluate(candidate, dissims, pairs)?)
        } else {
            None
        };
        match trial {
            Some(next) if next.stress <= state.stress => {
                let improvement = (state.stress - next.stress) / state.stress;
                state = next;
                accepted_stress.push(state.stress);
                step *= STEP_GROWTH;
                if improvement < cfg.stress_tol {
                    converged = true;
                    break;
                }
            }
            _ => {
                step *= 0.5;
                if step < MIN_STEP {
                    converged = true;
                    break;
                }
            }
        }
    }

    Ok(Descent {
        coords: state.x,
        stress1: state.stress,
        distances: state.distances,
        disparities: state.disparities,
        iterations,
        converged,
        accepted_stress,
    })
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Seeded standard-normal starting configuration.
pub fn random_start(n: usize, dims: usize, seed: u64, restart: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(seed, restart));
    let values: Vec<f64> = (0..n * dims).map(|_| StandardNormal.sample(&mut rng)).collect();
    DMatrix::from_row_slice(n, dims, &values)
}

fn check_not_degenerate(dissims: &[f64]) -> Result<()> {
    let first = dissims[0];
    if dissims.iter().all(|&v| v == first) {
        return Err(Error::domain(format!(
            "degenerate dissimilarity matrix: every off-diagonal entry equals {first}"
        )));
    }
    Ok(())
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    pearson(x, y).map_or(0.0, |r| r * r)
}

/// Best-of-restarts non-metric MDS.
pub fn nmds_fit(d: &DissimilarityMatrix, cfg: &MdsConfig) -> Result<MdsSolution> {
    nmds_fit_with_starts(d, cfg, &[])
}

/// [`nmds_fit`] with additional caller-supplied starting configurations,
/// tried after the configured restarts.
pub fn nmds_fit_with_starts(
    d: &DissimilarityMatrix,
    cfg: &MdsConfig,
    extra_starts: &[DMatrix<f64>],
) -> Result<MdsSolution> {
    d.validate()?;
    let n = d.n();
    cfg.validate(n)?;
    for start in extra_starts {
        if start.shape() != (n, cfg.dims) {
            return Err(Error::config(format!(
                "warm start has shape {:?}, expected ({n}, {})",
                start.shape(),
                cfg.dims
            )));
        }
    }
    let pairs = d.pairs();
    let dissims = d.upper_triangle();
    check_not_degenerate(&dissims)?;

    let classical = classical_mds(d, cfg.dims)?;
    let total = cfg.restarts + extra_starts.len();
    let runs: Vec<Result<Descent>> = (0..total)
        .into_par_iter()
        .map(|r| {
            let init = if r == 0 && classical.iter().any(|&v| v != 0.0) {
                classical.clone()
            } else if r < cfg.restarts {
                random_start(n, cfg.dims, cfg.seed, r)
            } else {
                extra_starts[r - cfg.restarts].clone()
            };
            descend(&dissims, &pairs, &init, cfg)
        })
        .collect();

    let mut best: Option<(usize, Descent)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        let run = run?;
        if best.as_ref().is_none_or(|(_, b)| run.stress1 < b.stress1) {
            best = Some((r, run));
        }
    }
    let (restart_index, run) = best.expect("at least one restart");

    let dd = r_squared(&dissims, &run.disparities);
    let dh = r_squared(&run.disparities, &run.distances);
    let (r_sq, r_alt) = match cfg.r_squared {
        RSquared::DissimilarityDisparity => (dd, dh),
        RSquared::DisparityDistance => (dh, dd),
    };
    let coords = run
        .coords
        .row_iter()
        .map(|row| row.iter().copied().collect())
        .collect();
    Ok(MdsSolution {
        ids: d.ids.clone(),
        dims: cfg.dims,
        coords,
        stress1: run.stress1,
        r_squared: r_sq,
        r_squared_alternative: r_alt,
        pairs,
        dissimilarities: dissims,
        disparities: run.disparities,
        distances: run.distances,
        iterations_used: run.iterations,
        restart_index,
        converged: run.converged,
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeRow {
    pub dims: usize,
    pub stress1: f64,
    pub r_squared: f64,
}

/// Fits every dimensionality in `1..=max_dims`. Each fit after the first
/// also starts from the previous solution padded with a near-zero extra
/// coordinate, so best stress cannot rise with dimensionality beyond
/// optimizer tolerance.
pub fn scree_solutions(
    d: &DissimilarityMatrix,
    max_dims: usize,
    cfg: &MdsConfig,
) -> Result<Vec<MdsSolution>> {
    let n = d.n();
    if max_dims == 0 || max_dims >= n {
        return Err(Error::config(format!(
            "scree over {n} stimuli needs 1 <= max_dims < {n}, got {max_dims}"
        )));
    }
    let mut out: Vec<MdsSolution> = Vec::with_capacity(max_dims);
    for dims in 1..=max_dims {
        let fit_cfg = MdsConfig { dims, ..cfg.clone() };
        let warm: Vec<DMatrix<f64>> = match out.last() {
            Some(prev) => {
                let prev_x = prev.coords_matrix();
                let pad = random_start(n, 1, cfg.seed, usize::MAX - dims);
                vec![DMatrix::from_fn(n, dims, |i, k| {
                    if k < dims - 1 {
                        prev_x[(i, k)]
                    } else {
                        1e-6 * pad[(i, 0)]
                    }
                })]
            }
            None => Vec::new(),
        };
        out.push(nmds_fit_with_starts(d, &fit_cfg, &warm)?);
    }
    Ok(out)
}

pub fn scree(d: &DissimilarityMatrix, max_dims: usize, cfg: &MdsConfig) -> Result<Vec<ScreeRow>> {
    Ok(scree_solutions(d, max_dims, cfg)?
        .into_iter()
        .map(|s| ScreeRow {
            dims: s.dims,
            stress1: s.stress1,
            r_squared: s.r_squared,
        })
        .collect())
}
