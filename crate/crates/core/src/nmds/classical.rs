use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ratings::DissimilarityMatrix;

const JACOBI_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations,
/// iterated until the off-diagonal Frobenius norm drops below `1e-12`
/// (relative to the matrix norm when that exceeds 1).
///
/// Returns eigenvalues sorted in descending order with the matching
/// eigenvectors as columns. Each eigenvector's largest-magnitude component
/// is made positive so the output is unique up to repeated eigenvalues.
pub fn symmetric_eigen(matrix: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::domain("eigen-decomposition needs a square matrix"));
    }
    let mut a = matrix.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tolerance = JACOBI_TOLERANCE * matrix.norm().max(1.0);

    let mut sweeps = 0;
    while off_diagonal_norm(&a) > tolerance {
        if sweeps == MAX_SWEEPS {
            return Err(Error::domain(format!(
                "Jacobi iteration did not converge in {MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let mut vec = v.column(i).clone_owned();
        let pivot = vec.iter().copied().max_by(|x, y| x.abs().total_cmp(&y.abs())).unwrap_or(0.0);
        if pivot < 0.0 {
            vec.neg_mut();
        }
        vectors.set_column(col, &vec);
    }
    Ok((values, vectors))
}

/// Double-centred scalar product matrix `-1/2 J D∘D J`.
pub fn double_center(d: &DissimilarityMatrix) -> DMatrix<f64> {
    let n = d.n();
    let sq = DMatrix::from_fn(n, n, |i, j| d.get(i, j).powi(2));
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).mean()).collect();
    let grand = sq.mean();
    DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand))
}

/// Torgerson scaling: the top `dims` eigenvectors of the double-centred
/// matrix, scaled by the square roots of their (clamped non-negative)
/// eigenvalues.
pub fn classical_mds(d: &DissimilarityMatrix, dims: usize) -> Result<DMatrix<f64>> {
    let n = d.n();
    if dims == 0 || dims >= n {
        return Err(Error::config(format!(
            "classical scaling of {n} points needs 1 <= dims < {n}, got {dims}"
        )));
    }
    let (values, vectors) = symmetric_eigen(&double_center(d))?;
    let mut coords = DMatrix::<f64>::zeros(n, dims);
    for k in 0..dims {
        let scale = values[k].max(0.0).sqrt();
        coords.set_column(k, &(vectors.column(k) * scale));
    }
    Ok(coords)
}
