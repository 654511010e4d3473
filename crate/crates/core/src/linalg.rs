//! Small symmetric solves with a ridge fallback for ill-conditioned systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition number above which the diagonal receives [`RIDGE`].
pub const MAX_CONDITION: f64 = 1e12;

/// Diagonal jitter added to near-singular systems.
pub const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: DVector<f64>,
    /// Whether the ridge was applied.
    pub jittered: bool,
}

/// 2-norm condition number of a symmetric matrix, `inf` when singular or
/// indefinite.
pub fn symmetric_condition(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let min = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if !(min > 0.0) {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `a x = b` for symmetric positive (semi)definite `a` by Cholesky.
///
/// Systems whose condition number exceeds [`MAX_CONDITION`] are solved with
/// [`RIDGE`] added to the diagonal; the caller sees this in
/// [`Solution::jittered`].
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Solution> {
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entries in linear system".into()));
    }
    let mut jittered = false;
    let mut matrix = a.clone();
    if symmetric_condition(&matrix) > MAX_CONDITION {
        for i in 0..matrix.nrows() {
            matrix[(i, i)] += RIDGE;
        }
        jittered = true;
    }
    let chol = matrix
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{}x{} system not positive definite after ridge", a.nrows(), a.ncols())))?;
    Ok(Solution {
        x: chol.solve(b),
        jittered,
    })
}
