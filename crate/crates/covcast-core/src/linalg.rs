//! Small dense linear-algebra kernels shared across the crate.
//!
//! Everything here works on `nalgebra` dynamic matrices and is sized for
//! n up to a few hundred. The Cholesky routine uses a relative pivot
//! tolerance so that rank-deficient second-moment matrices fail cleanly
//! instead of producing factors with near-zero pivots.

use nalgebra::{DMatrix, DVector};

/// Relative pivot floor for Cholesky factorizations.
const PIVOT_RTOL: f64 = 1e-12;

/// Lower-triangular Cholesky factor of a symmetric matrix, or `None` if
/// a pivot falls below `PIVOT_RTOL` times the largest diagonal entry.
pub fn chol_lower(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0f64, f64::max);
    let floor = if scale > 0.0 { scale * PIVOT_RTOL } else { 0.0 };
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(l)
}

/// Cholesky with a bare positivity pivot test, for matrices whose
/// diagonal legitimately spans many orders of magnitude (interior-point
/// normal equations). Availability checks should use [`chol_lower`].
pub fn chol_lower_raw(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let v = x[k];
            x[i] -= l[(i, k)] * v;
        }
        x[i] /= l[(i, i)];
    }
    x
}

/// Solves `L^T x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = x[k];
            x[i] -= l[(k, i)] * v;
        }
        x[i] /= l[(i, i)];
    }
    x
}

/// Inverse of a lower-triangular matrix, itself lower-triangular.
pub fn invert_lower(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for j in 0..n {
        inv[(j, j)] = 1.0 / l[(j, j)];
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s += l[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / l[(i, i)];
        }
    }
    inv
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub fn spd_inverse_from_chol(l: &DMatrix<f64>) -> DMatrix<f64> {
    let linv = invert_lower(l);
    // (L L^T)^{-1} = L^{-T} L^{-1}; build symmetric by construction.
    let n = l.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += linv[(k, i)] * linv[(k, j)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// log det of an SPD matrix given its lower Cholesky factor.
pub fn logdet_from_chol(l: &DMatrix<f64>) -> f64 {
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Symmetrizes in place by averaging with the transpose.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}
