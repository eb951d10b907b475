use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Result of aligning `Y` onto `X`.
#[derive(Debug, Clone)]
pub struct Procrustes {
    pub aligned: DMatrix<f64>,
    pub rotation: DMatrix<f64>,
    pub scale: f64,
    pub translation: DVector<f64>,
    /// `‖X − sYQ − 1tᵀ‖_F / ‖X − mean(X)‖_F`
    pub residual: f64,
}

fn centered(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mean = DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.mean()));
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    (out, mean)
}

/// Optimal similarity transform (translation, orthogonal map, isotropic
/// scale) of `y` onto `x`.
pub fn procrustes_align(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Procrustes> {
    if x.shape() != y.shape() {
        return Err(Error::domain(format!(
            "procrustes: shapes {:?} and {:?} differ",
            x.shape(),
            y.shape()
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::domain("procrustes needs at least two points"));
    }
    let (xc, x_mean) = centered(x);
    let (yc, y_mean) = centered(y);
    let x_norm = xc.norm();
    let y_norm_sq = yc.norm_squared();

    let d = x.ncols();
    let (rotation, scale) = if y_norm_sq == 0.0 {
        (DMatrix::identity(d, d), 0.0)
    } else {
        let m = yc.transpose() * &xc;
        let svd = m.svd(true, true);
        let u = svd.u.ok_or_else(|| Error::domain("procrustes: SVD failed"))?;
        let v_t = svd.v_t.ok_or_else(|| Error::domain("procrustes: SVD failed"))?;
        let trace: f64 = svd.singular_values.iter().sum();
        (u * v_t, trace / y_norm_sq)
    };

    let mut aligned = &yc * &rotation * scale;
    for mut row in aligned.row_iter_mut() {
        row += x_mean.transpose();
    }
    let translation = &x_mean - (&rotation.transpose() * &y_mean) * scale;
    let error = (x - &aligned).norm();
    let residual = if x_norm == 0.0 {
        if error == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        error / x_norm
    };
    Ok(Procrustes {
        aligned,
        rotation,
        scale,
        translation,
        residual,
    })
}
