//! Cholesky factorization and the log-determinant built on it.

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::scalar::Scalar;

/// Absolute symmetry tolerance, scaled by `max(1, max|m_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Diagonal jitter values tried in order until factorization succeeds.
#[derive(Clone, Debug, PartialEq)]
pub struct JitterPolicy {
    ladder: Vec<f64>,
}

impl JitterPolicy {
    /// A single attempt with the given jitter.
    pub fn fixed(jitter: f64) -> Self {
        Self {
            ladder: vec![jitter],
        }
    }

    /// 0, then 1e-8, 1e-6, 1e-4.
    pub fn escalating() -> Self {
        Self {
            ladder: vec![0.0, 1e-8, 1e-6, 1e-4],
        }
    }

    pub fn ladder(&self) -> &[f64] {
        &self.ladder
    }
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self::escalating()
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = m`.
pub fn cholesky<T: Scalar>(m: &Matrix<T>) -> Option<Matrix<T>> {
    let n = m.rows();
    if n != m.cols() {
        return None;
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in (j + 1)..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Some(l)
}

/// Inverse of `L Lᵀ` given the factor `L`, by forward/back substitution on unit columns.
pub fn cholesky_inverse<T: Scalar>(l: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    let mut y = vec![T::zero(); n];
    for col in 0..n {
        for i in 0..n {
            let mut s = if i == col { T::one() } else { T::zero() };
            for k in 0..i {
                s -= l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l.get(k, i) * inv.get(k, col);
            }
            inv.set(i, col, s / l.get(i, i));
        }
    }
    // symmetrize away rounding
    let half = T::of(0.5);
    Matrix::from_fn(n, n, |i, j| half * (inv.get(i, j) + inv.get(j, i)))
}

/// Result of a successful log-determinant evaluation.
#[derive(Clone, Debug)]
pub struct LogDet<T> {
    pub value: T,
    /// Jitter actually added to the diagonal.
    pub jitter: f64,
    /// `(m + jitter·I)⁻¹`, the gradient of the log-determinant.
    pub inverse: Matrix<T>,
}

/// `log det(m + jitter·I)` via `2·Σ log L_ii`, walking the jitter ladder.
pub fn cholesky_logdet<T: Scalar>(m: &Matrix<T>, policy: &JitterPolicy) -> Result<LogDet<T>> {
    if m.rows() != m.cols() {
        return Err(Error::ShapeMismatch {
            op: "cholesky_logdet",
            lhs: m.shape(),
            rhs: (m.cols(), m.rows()),
        });
    }
    let tol = T::of(SYMMETRY_TOL) * T::one().max(m.max_abs());
    let asym = m.max_asymmetry();
    if asym > tol {
        return Err(Error::NotSymmetric(asym.to_f64_lossy()));
    }
    let n = m.rows();
    for &jitter in policy.ladder() {
        let shifted = if jitter == 0.0 {
            m.clone()
        } else {
            let mut s = m.clone();
            for i in 0..n {
                s.set(i, i, s.get(i, i) + T::of(jitter));
            }
            s
        };
        if let Some(l) = cholesky(&shifted) {
            let two = T::of(2.0);
            let value = (0..n).map(|i| two * l.get(i, i).ln()).sum();
            return Ok(LogDet {
                value,
                jitter,
                inverse: cholesky_inverse(&l),
            });
        }
    }
    Err(Error::NotPositiveDefinite {
        max_jitter: policy.ladder().last().copied().unwrap_or(0.0),
    })
}
