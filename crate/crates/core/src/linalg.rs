//! Small dense linear-algebra helpers shared by the regression and
//! reconciliation modules.

use nalgebra::{DMatrix, DVector, Dyn, SVD};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_RELATIVE_TOLERANCE: f64 = 1e-12;

/// Stopping thresholds tried in turn, as multiples of machine epsilon.
const SVD_EPSILON_MULTIPLES: [f64; 4] = [5.0, 1.0, 20.0, 100.0];

/// Iteration cap for each SVD attempt.
const SVD_MAX_ITERATIONS: usize = 10_000;

/// Largest recomposition error accepted, relative to the largest entry.
const RECOMPOSITION_TOLERANCE: f64 = 1e-11;

fn is_symmetric(a: &DMatrix<f64>) -> bool {
    a.is_square() && a.iter().zip(a.transpose().iter()).all(|(x, y)| x == y)
}

/// SVD whose recomposition reproduces `a`.
///
/// nalgebra's iteration occasionally stops with a decomposition that is off
/// by ~1e-4 relative; other stopping thresholds then converge properly.
fn accurate_svd(a: &DMatrix<f64>) -> SVD<f64, Dyn, Dyn> {
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, SVD<f64, Dyn, Dyn>)> = None;
    for multiple in SVD_EPSILON_MULTIPLES {
        let Some(svd) = a.clone().try_svd(true, true, multiple * f64::EPSILON, SVD_MAX_ITERATIONS) else {
            continue;
        };
        let error = svd.clone().recompose().map(|r| max_abs(&(r - a)) / scale).unwrap_or(f64::INFINITY);
        if error <= RECOMPOSITION_TOLERANCE {
            return svd;
        }
        if best.as_ref().is_none_or(|(e, _)| error < *e) {
            best = Some((error, svd));
        }
    }
    match best {
        Some((error, svd)) => {
            log::warn!("SVD recomposition error {error:.3e} exceeds {RECOMPOSITION_TOLERANCE:.0e}");
            svd
        }
        None => a.clone().svd(true, true),
    }
}

/// Singular values (or absolute eigenvalues for symmetric input) of `a`.
fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    if is_symmetric(a) {
        a.clone().symmetric_eigen().eigenvalues.abs()
    } else {
        accurate_svd(a).singular_values
    }
}

/// Moore-Penrose pseudo-inverse, from the eigendecomposition when `a` is
/// symmetric and from the SVD otherwise.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let mut result = DMatrix::zeros(cols, rows);
    if is_symmetric(a) {
        let eig = a.clone().symmetric_eigen();
        let cutoff = eig.eigenvalues.amax() * PINV_RELATIVE_TOLERANCE;
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda.abs() > cutoff && lambda != 0.0 {
                let v = eig.eigenvectors.column(i);
                result += (v * v.transpose()) / lambda;
            }
        }
        return result;
    }
    let svd = accurate_svd(a);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let cutoff = svd.singular_values.max() * PINV_RELATIVE_TOLERANCE;
    for (i, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma > cutoff && sigma > 0.0 {
            let v_col = v_t.row(i).transpose();
            let u_col = u.column(i);
            result += (v_col * u_col.transpose()) / sigma;
        }
    }
    result
}

/// 2-norm condition number. Returns infinity for rank-deficient input.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    let sv = singular_values(a);
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive-definite matrix.
///
/// Fails with the condition number attached when Cholesky breaks down.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    match a.clone().cholesky() {
        Some(chol) => {
            let inv = chol.inverse();
            if inv.iter().all(|v| v.is_finite()) {
                Ok(inv)
            } else {
                Err(Error::Numerical {
                    message: format!("{what} inverse is not finite"),
                    condition: condition_number(a),
                })
            }
        }
        None => Err(Error::Numerical {
            message: format!("{what} is singular or not positive definite"),
            condition: condition_number(a),
        }),
    }
}

/// Minimum-norm least-squares solution of `x · beta ≈ y`.
///
/// A thin QR reduces the problem to the square factor `R`, whose SVD
/// then reveals the numerical rank; coefficients along null directions
/// are set to zero.
pub fn lstsq_min_norm(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let (rows, cols) = x.shape();
    if rows >= cols {
        let qr = x.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let qty = q.transpose() * y;
        pseudo_inverse(&r) * qty
    } else {
        pseudo_inverse(x) * y
    }
}

/// Symmetrize in place: `a = (a + aᵀ) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Largest absolute entry, 0 for an empty matrix.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
