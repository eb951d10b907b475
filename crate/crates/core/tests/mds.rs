use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use timbre_core::nmds::{
    classical_mds, descend, isotonic_fit, nmds_fit, procrustes_align, random_start,
    regression_order, scree, stress1, MdsConfig,
};
use timbre_core::ratings::DissimilarityMatrix;

fn planted(n: usize, dims: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, dims, |_, _| rng.random_range(-1.0..1.0))
}

fn distances(x: &DMatrix<f64>) -> DissimilarityMatrix {
    let n = x.nrows();
    let values = (0..n)
        .map(|i| (0..n).map(|j| (x.row(i) - x.row(j)).norm()).collect())
        .collect();
    DissimilarityMatrix::from_values(values).unwrap()
}

#[test]
fn classical_scaling_reproduces_euclidean_distances() {
    for seed in 0..5 {
        let x = planted(15, 4, seed);
        let d = distances(&x);
        let y = classical_mds(&d, 4).unwrap();
        let back = distances(&y);
        for (a, b) in d.upper_triangle().iter().zip(back.upper_triangle()) {
            assert!((a - b).abs() <= 1e-8 * a, "{a} vs {b}");
        }
    }
}

#[test]
fn planted_configuration_is_recovered() {
    for seed in 0..3 {
        let x = planted(15, 4, 100 + seed);
        let sol = nmds_fit(&distances(&x), &MdsConfig::with_dims(4, seed)).unwrap();
        assert!(sol.stress1 <= 0.01, "seed {seed}: stress {}", sol.stress1);
        let p = procrustes_align(&x, &sol.coords_matrix()).unwrap();
        assert!(p.residual <= 0.01, "seed {seed}: residual {}", p.residual);
    }
}

#[test]
fn solution_invariants_hold() {
    let x = planted(12, 3, 7);
    let sol = nmds_fit(&distances(&x), &MdsConfig::with_dims(2, 3)).unwrap();
    let coords = sol.coords_matrix();
    for col in coords.column_iter() {
        assert!(col.mean().abs() < 1e-9);
    }
    let recomputed: Vec<f64> = sol
        .pairs
        .iter()
        .map(|&(i, j)| (coords.row(i) - coords.row(j)).norm())
        .collect();
    let s = stress1(&recomputed, &sol.disparities).unwrap();
    assert!((s - sol.stress1).abs() < 1e-9);
    assert!((0.0..=1.0).contains(&sol.r_squared));
    assert!(sol.restart_index < 20);
}

#[test]
fn full_rank_embedding_fits_metric_data() {
    let x = planted(8, 5, 11);
    let sol = nmds_fit(&distances(&x), &MdsConfig::with_dims(7, 1)).unwrap();
    assert!(sol.stress1 <= 1e-3, "{}", sol.stress1);
}

#[test]
fn fit_is_deterministic() {
    let d = distances(&planted(10, 3, 5));
    let cfg = MdsConfig::with_dims(2, 42);
    assert_eq!(nmds_fit(&d, &cfg).unwrap(), nmds_fit(&d, &cfg).unwrap());
}

#[test]
fn degenerate_matrices_are_rejected() {
    let zeros = DissimilarityMatrix::from_values(vec![vec![0.0; 5]; 5]).unwrap();
    assert!(nmds_fit(&zeros, &MdsConfig::with_dims(2, 0)).is_err());
    let constant = (0..5)
        .map(|i| (0..5).map(|j| if i == j { 0.0 } else { 3.0 }).collect())
        .collect();
    let constant = DissimilarityMatrix::from_values(constant).unwrap();
    assert!(nmds_fit(&constant, &MdsConfig::with_dims(2, 0)).is_err());
    let d = distances(&planted(5, 2, 0));
    assert!(nmds_fit(&d, &MdsConfig::with_dims(5, 0)).is_err());
    let no_restarts = MdsConfig {
        restarts: 0,
        ..MdsConfig::with_dims(2, 0)
    };
    assert!(nmds_fit(&d, &no_restarts).is_err());
}

#[test]
fn accepted_stress_never_increases() {
    let d = distances(&planted(12, 4, 9));
    let (pairs, dissims) = (d.pairs(), d.upper_triangle());
    for r in 1..6 {
        let start = random_start(12, 2, 17, r);
        let run = descend(&dissims, &pairs, &start, &MdsConfig::with_dims(2, 17)).unwrap();
        for w in run.accepted_stress.windows(2) {
            assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
        }
    }
}

#[test]
fn rigid_motion_of_start_leaves_stress_unchanged() {
    let d = distances(&planted(10, 3, 21));
    let (pairs, dissims) = (d.pairs(), d.upper_triangle());
    let cfg = MdsConfig::with_dims(2, 0);
    let start = random_start(10, 2, 5, 1);
    let (s, c) = 1.1f64.sin_cos();
    let q = DMatrix::from_row_slice(2, 2, &[c, s, s, -c]);
    let mut moved = &start * q;
    for mut row in moved.row_iter_mut() {
        row[0] += 4.0;
        row[1] -= 2.5;
    }
    let a = descend(&dissims, &pairs, &start, &cfg).unwrap();
    let b = descend(&dissims, &pairs, &moved, &cfg).unwrap();
    assert!((a.stress1 - b.stress1).abs() < 1e-9, "{} vs {}", a.stress1, b.stress1);
}

#[test]
fn scree_is_monotone_and_finds_planted_dimension() {
    let x = planted(15, 4, 33);
    let rows = scree(&distances(&x), 5, &MdsConfig::with_dims(1, 8)).unwrap();
    assert_eq!(rows.iter().map(|r| r.dims).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    for w in rows.windows(2) {
        assert!(w[1].stress1 <= w[0].stress1 + 1e-3);
    }
    assert!(rows[3].stress1 < rows[1].stress1);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.stress1)));
}

#[test]
fn procrustes_never_worse_than_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let x = DMatrix::from_fn(9, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(9, 3, |_, _| rng.random_range(-1.0..1.0));
        let p = procrustes_align(&x, &y).unwrap();
        let mut xc = x.clone();
        for mut col in xc.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        let naive = (&x - &y).norm() / xc.norm();
        assert!((0.0..=1.0).contains(&p.residual));
        assert!(p.residual <= naive + 1e-12);
    }
}

proptest! {
    #[test]
    fn isotonic_output_is_monotone(
        data in prop::collection::vec((0u8..6, 0.0f64..10.0), 1..30)
    ) {
        let dissims: Vec<f64> = data.iter().map(|(d, _)| *d as f64).collect();
        let dists: Vec<f64> = data.iter().map(|(_, x)| *x).collect();
        let fit = isotonic_fit(&dissims, &dists).unwrap();
        let order = regression_order(&dissims, &dists);
        for w in order.windows(2) {
            prop_assert!(fit[w[0]] <= fit[w[1]] + 1e-12);
        }
        let sum_in: f64 = dists.iter().sum();
        let sum_out: f64 = fit.iter().sum();
        prop_assert!((sum_in - sum_out).abs() < 1e-9);
    }

    #[test]
    fn monotone_transform_preserves_regression_order(
        data in prop::collection::vec((0.1f64..9.0, 0.0f64..5.0), 2..30)
    ) {
        let dissims: Vec<f64> = data.iter().map(|(d, _)| *d).collect();
        let transformed: Vec<f64> = dissims.iter().map(|d| d.powi(3) + 2.0 * d).collect();
        let dists: Vec<f64> = data.iter().map(|(_, x)| *x).collect();
        prop_assert_eq!(regression_order(&dissims, &dists), regression_order(&transformed, &dists));
        prop_assert_eq!(
            isotonic_fit(&dissims, &dists).unwrap(),
            isotonic_fit(&transformed, &dists).unwrap()
        );
    }
}
