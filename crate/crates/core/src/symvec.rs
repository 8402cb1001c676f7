//! Symmetric vectorization with trace-preserving scaling.
//!
//! `vec_s` maps a symmetric d x d matrix to a vector of length d(d+1)/2 in
//! row-major upper-triangle order, scaling off-diagonal entries by sqrt(2) so
//! that `Tr[X Y] = vec_s(X) . vec_s(Y)` holds exactly. `unvec_s` is the
//! inverse.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Absolute/relative tolerance for the symmetry precondition of `vec_s`.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Length of `vec_s` output for a d x d symmetric matrix.
pub fn sym_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Largest absolute asymmetry |S - S'| relative to max(1, |S|_max).
pub fn asymmetry(s: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            scale = scale.max(s[(i, j)].abs());
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Symmetric vectorization. Errors if the input is not square and symmetric
/// within `SYMMETRY_TOL`.
pub fn vec_s(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    if s.nrows() != s.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "vec_s expects a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if asymmetry(s) > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(format!(
            "vec_s input has relative asymmetry {:.3e}",
            asymmetry(s)
        )));
    }
    let d = s.nrows();
    let mut out = DVector::zeros(sym_len(d));
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            out[k] = if i == j {
                s[(i, j)]
            } else {
                // average the two triangles so tiny asymmetries cancel
                sqrt2 * 0.5 * (s[(i, j)] + s[(j, i)])
            };
            k += 1;
        }
    }
    Ok(out)
}

/// Inverse of `vec_s` for a d x d symmetric matrix.
pub fn unvec_s(v: &DVector<f64>, d: usize) -> Result<DMatrix<f64>> {
    if v.len() != sym_len(d) {
        return Err(Error::DimensionMismatch(format!(
            "unvec_s expects length {} for dimension {}, got {}",
            sym_len(d),
            d,
            v.len()
        )));
    }
    let mut out = DMatrix::zeros(d, d);
    let inv_sqrt2 = 1.0 / std::f64::consts::SQRT_2;
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            if i == j {
                out[(i, j)] = v[k];
            } else {
                let x = v[k] * inv_sqrt2;
                out[(i, j)] = x;
                out[(j, i)] = x;
            }
            k += 1;
        }
    }
    Ok(out)
}

/// Matrix of a linear map on symmetric d x d matrices in vec_s coordinates.
///
/// `f` must map symmetric matrices to symmetric matrices; the result acts on
/// vec_s(X) by multiplication.
pub fn linear_map_matrix<F>(d: usize, f: F) -> DMatrix<f64>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let len = sym_len(d);
    let mut out = DMatrix::zeros(len, len);
    for k in 0..len {
        let mut e = DVector::zeros(len);
        e[k] = 1.0;
        let basis = unvec_s(&e, d).expect("basis element");
        let image = f(&basis);
        let mut sym = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                sym[(i, j)] = 0.5 * (image[(i, j)] + image[(j, i)]);
            }
        }
        let col = vec_s(&sym).expect("image of symmetric basis");
        out.set_column(k, &col);
    }
    out
}
