use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter (times the mean diagonal) used once escalation starts.
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-6;
/// Number of x10 escalations tried after the requested jitter fails.
pub const JITTER_ESCALATIONS: usize = 3;

/// Cholesky factor of `matrix + jitter * I` with the jitter that succeeded.
pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl JitteredCholesky {
    /// Factors `matrix + jitter * I`. On failure the jitter is raised to
    /// `max(jitter, 1e-6 * mean diagonal)` and multiplied by ten up to three
    /// times before giving up.
    pub fn new(matrix: &DMatrix<f64>, jitter: f64) -> Result<Self> {
        let n = matrix.nrows();
        if n != matrix.ncols() {
            return Err(Error::DimensionError {
                expected: n,
                got: matrix.ncols(),
            });
        }
        if let Some(factor) = shifted(matrix, jitter).cholesky() {
            return Ok(Self { factor, jitter });
        }
        let mean_diag = if n == 0 {
            1.0
        } else {
            (matrix.trace() / n as f64).abs().max(f64::MIN_POSITIVE)
        };
        let mut j = jitter.max(DEFAULT_RELATIVE_JITTER * mean_diag);
        for _ in 0..JITTER_ESCALATIONS {
            if let Some(factor) = shifted(matrix, j).cholesky() {
                return Ok(Self { factor, jitter: j });
            }
            j *= 10.0;
        }
        Err(Error::NotPositiveDefinite { jitter: j / 10.0 })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.factor
            .solve(&DVector::from_column_slice(rhs))
            .as_slice()
            .to_vec()
    }

    /// `log |matrix + jitter I|`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

fn shifted(matrix: &DMatrix<f64>, jitter: f64) -> DMatrix<f64> {
    let mut m = matrix.clone();
    if jitter != 0.0 {
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
    }
    m
}

/// Solves `(matrix + jitter I) x = rhs` by Cholesky, escalating the jitter if
/// the factorization fails.
pub fn dense_cholesky_solve(matrix: &DMatrix<f64>, rhs: &[f64], jitter: f64) -> Result<Vec<f64>> {
    if rhs.len() != matrix.nrows() {
        return Err(Error::DimensionError {
            expected: matrix.nrows(),
            got: rhs.len(),
        });
    }
    if jitter < 0.0 {
        return Err(Error::InvalidConfig(format!("negative jitter {jitter}")));
    }
    Ok(JitteredCholesky::new(matrix, jitter)?.solve(rhs))
}

pub fn dense_matvec(matrix: &DMatrix<f64>, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != matrix.ncols() {
        return Err(Error::DimensionError {
            expected: matrix.ncols(),
            got: v.len(),
        });
    }
    Ok((matrix * DVector::from_column_slice(v)).as_slice().to_vec())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
