use nalgebra::{DMatrix, SymmetricEigen, LU, Dyn};

use super::dense::{dense_matvec, dot, norm, JitteredCholesky};
use super::toeplitz::{check_len, ToeplitzMatrix, ToeplitzOperator};
use crate::error::{Error, Result};

/// Total dimension at or below which solves go through a dense factorization.
pub const DENSE_SOLVE_LIMIT: usize = 512;
/// Kronecker operators larger than this are never expanded to dense form.
pub const MAX_DENSE_EXPANSION: usize = 4096;

/// Covariance-like operator with a uniform matvec contract.
#[derive(Clone, Debug)]
pub enum StructuredOperator {
    Dense(DMatrix<f64>),
    Toeplitz(ToeplitzOperator),
    Kronecker(KroneckerOperator),
    /// `base + shift * I`
    Shifted {
        base: Box<StructuredOperator>,
        shift: f64,
    },
}

impl StructuredOperator {
    pub fn toeplitz(matrix: ToeplitzMatrix) -> Self {
        StructuredOperator::Toeplitz(ToeplitzOperator::new(matrix))
    }

    pub fn shifted(self, shift: f64) -> Self {
        StructuredOperator::Shifted {
            base: Box::new(self),
            shift,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            StructuredOperator::Dense(m) => m.nrows(),
            StructuredOperator::Toeplitz(t) => t.dim(),
            StructuredOperator::Kronecker(k) => k.dim(),
            StructuredOperator::Shifted { base, .. } => base.dim(),
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            StructuredOperator::Dense(m) => dense_matvec(m, v),
            StructuredOperator::Toeplitz(t) => t.matvec(v),
            StructuredOperator::Kronecker(k) => kron_matvec(k, v),
            StructuredOperator::Shifted { base, shift } => {
                let mut out = base.matvec(v)?;
                for (o, x) in out.iter_mut().zip(v) {
                    *o += shift * x;
                }
                Ok(out)
            }
        }
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        match self {
            StructuredOperator::Dense(m) => Ok(m.clone()),
            StructuredOperator::Toeplitz(t) => Ok(t.matrix().to_dense()),
            StructuredOperator::Kronecker(k) => k.to_dense(),
            StructuredOperator::Shifted { base, shift } => {
                let mut m = base.to_dense()?;
                for i in 0..m.nrows() {
                    m[(i, i)] += shift;
                }
                Ok(m)
            }
        }
    }

    /// Solves `self * x = rhs`: dense Cholesky up to [`DENSE_SOLVE_LIMIT`],
    /// factor-wise for pure Kronecker operators, conjugate gradients otherwise.
    pub fn solve(&self, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
        check_len(self.dim(), rhs.len())?;
        if self.dim() <= DENSE_SOLVE_LIMIT {
            return Ok(JitteredCholesky::new(&self.to_dense()?, 0.0)?.solve(rhs));
        }
        match self {
            StructuredOperator::Kronecker(k) => kron_solve(k, rhs),
            _ => cg_solve(self, rhs, tol, 10 * self.dim()).map(|s| s.solution),
        }
    }
}

/// `factors[0] ⊗ factors[1] ⊗ ...`, applied without expansion.
#[derive(Clone, Debug)]
pub struct KroneckerOperator {
    factors: Vec<StructuredOperator>,
}

impl KroneckerOperator {
    /// Factors must be dense or Toeplitz blocks.
    pub fn new(factors: Vec<StructuredOperator>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::EmptyInput("Kronecker factors".into()));
        }
        for f in &factors {
            match f {
                StructuredOperator::Dense(m) if m.nrows() != m.ncols() => {
                    return Err(Error::DimensionError {
                        expected: m.nrows(),
                        got: m.ncols(),
                    })
                }
                StructuredOperator::Dense(_) | StructuredOperator::Toeplitz(_) => {}
                _ => {
                    return Err(Error::InvalidConfig(
                        "Kronecker factors must be dense or Toeplitz".into(),
                    ))
                }
            }
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[StructuredOperator] {
        &self.factors
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(StructuredOperator::dim).collect()
    }

    pub fn dim(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        if self.dim() > MAX_DENSE_EXPANSION {
            return Err(Error::InvalidConfig(format!(
                "refusing to expand a {0}x{0} Kronecker operator",
                self.dim()
            )));
        }
        let mut acc = self.factors[0].to_dense()?;
        for f in &self.factors[1..] {
            acc = acc.kronecker(&f.to_dense()?);
        }
        Ok(acc)
    }

    /// 2-norm condition number of each factor (from its symmetric spectrum);
    /// `None` for factors above the dense limit.
    pub fn condition_numbers(&self) -> Vec<Option<f64>> {
        self.factors
            .iter()
            .map(|f| {
                if f.dim() > DENSE_SOLVE_LIMIT {
                    return None;
                }
                let m = f.to_dense().ok()?;
                let eig = SymmetricEigen::new(m).eigenvalues;
                let (lo, hi) = eig
                    .iter()
                    .fold((f64::INFINITY, 0.0f64), |(lo, hi), e| (lo.min(e.abs()), hi.max(e.abs())));
                Some(if lo == 0.0 { f64::INFINITY } else { hi / lo })
            })
            .collect()
    }
}

/// Applies `apply(k, fiber)` to every mode-`k` fiber of `v`, mode by mode.
fn apply_modewise(
    dims: &[usize],
    v: &[f64],
    mut apply: impl FnMut(usize, &[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let total: usize = dims.iter().product();
    check_len(total, v.len())?;
    let mut x = v.to_vec();
    let mut fiber = Vec::new();
    for (k, &nk) in dims.iter().enumerate() {
        let right: usize = dims[k + 1..].iter().product();
        let left = total / (nk * right);
        for l in 0..left {
            let base = l * nk * right;
            for r in 0..right {
                fiber.clear();
                fiber.extend((0..nk).map(|j| x[base + j * right + r]));
                let y = apply(k, &fiber)?;
                for (j, yj) in y.into_iter().enumerate() {
                    x[base + j * right + r] = yj;
                }
            }
        }
    }
    Ok(x)
}

/// Kronecker matvec via per-mode products; cost `O(N * sum n_k)` for
/// dense factors.
pub fn kron_matvec(op: &KroneckerOperator, v: &[f64]) -> Result<Vec<f64>> {
    apply_modewise(&op.dims(), v, |k, fiber| op.factors[k].matvec(fiber))
}

enum FactorSolver<'a> {
    Cholesky(JitteredCholesky),
    Lu(LU<f64, Dyn, Dyn>),
    Iterative(&'a StructuredOperator),
}

/// Solves `op x = rhs` using `(A ⊗ B)^{-1} = A^{-1} ⊗ B^{-1}`, one factor
/// system at a time.
pub fn kron_solve(op: &KroneckerOperator, rhs: &[f64]) -> Result<Vec<f64>> {
    check_len(op.dim(), rhs.len())?;
    let mut solvers = Vec::with_capacity(op.factors.len());
    for (i, f) in op.factors.iter().enumerate() {
        if f.dim() > DENSE_SOLVE_LIMIT {
            solvers.push(FactorSolver::Iterative(f));
            continue;
        }
        let m = f.to_dense()?;
        // no jitter: a singular factor is an error here
        if let Some(c) = m.clone().cholesky() {
            solvers.push(FactorSolver::Cholesky(JitteredCholesky { factor: c, jitter: 0.0 }));
        } else {
            let lu = m.lu();
            if !lu.is_invertible() {
                return Err(Error::SingularFactor { factor: i });
            }
            solvers.push(FactorSolver::Lu(lu));
        }
    }
    apply_modewise(&op.dims(), rhs, |k, fiber| match &solvers[k] {
        FactorSolver::Cholesky(c) => Ok(c.solve(fiber)),
        FactorSolver::Lu(lu) => lu
            .solve(&nalgebra::DVector::from_column_slice(fiber))
            .map(|x| x.as_slice().to_vec())
            .ok_or(Error::SingularFactor { factor: k }),
        FactorSolver::Iterative(f) => cg_solve(f, fiber, 1e-13, 20 * f.dim())
            .map(|s| s.solution)
            .map_err(|_| Error::SingularFactor { factor: k }),
    })
}

#[derive(Clone, Debug)]
pub struct CgSolution {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Unpreconditioned conjugate gradients for symmetric positive (semi)definite
/// operators.
pub fn cg_solve(op: &StructuredOperator, rhs: &[f64], tol: f64, max_iter: usize) -> Result<CgSolution> {
    check_len(op.dim(), rhs.len())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("CG tolerance must be positive (got {tol})")));
    }
    let n = rhs.len();
    let b_norm = norm(rhs);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgSolution {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut rel = rr.sqrt() / b_norm;
    for it in 1..=max_iter {
        let ap = op.matvec(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite { jitter: 0.0 });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        rel = rr_new.sqrt() / b_norm;
        if rel <= tol {
            return Ok(CgSolution {
                solution: x,
                iterations: it,
                relative_residual: rel,
            });
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(Error::MaxIterations {
        iterations: max_iter,
        residual: rel,
    })
}
