//! Factorizations of the training covariance `Σ = K^f ⊗ K + D ⊗ I`
//! restricted to the observed entries.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::data::{Observation, TrainingSet};
use super::hyper::Hyperparameters;
use crate::error::{Error, Result};
use crate::linalg::dense::{JitteredCholesky, DEFAULT_RELATIVE_JITTER, JITTER_ESCALATIONS};

/// Requested solver. `Structured` uses the spectral factorization when the
/// data form a complete weekly grid under a periodic kernel and falls back to
/// `Dense` otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Dense,
    Structured,
}

impl std::str::FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "dense" => Ok(SolverKind::Dense),
            "structured" => Ok(SolverKind::Structured),
            other => Err(format!("unknown solver {other:?}")),
        }
    }
}

/// Whether `data` admits the spectral path under `hyper`.
pub fn spectral_eligible(hyper: &Hyperparameters, data: &TrainingSet) -> bool {
    hyper.kernel.periodic && data.scheme.is_some() && data.is_complete()
}

pub(crate) struct DenseSystem {
    pub chol: JitteredCholesky,
    /// `k(t_i - t_j)` over training inputs.
    pub ktime: DMatrix<f64>,
    /// `dk/dlog(lengthscale)` over training inputs.
    pub dktime: DMatrix<f64>,
}

/// On a complete weekly grid with a periodic kernel, `K` is a symmetric
/// circulant with eigenvalues `λ_j` (DFT of its first column), so `Σ` is
/// block diagonal in the Fourier basis with `T x T` blocks `λ_j K^f + D`.
pub(crate) struct SpectralSystem {
    pub n: usize,
    pub lambda: Vec<f64>,
    pub dlambda: Vec<f64>,
    pub block_inverse: Vec<DMatrix<f64>>,
    pub log_det: f64,
    pub jitter: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

pub(crate) enum Factorization {
    Dense(DenseSystem),
    Spectral(SpectralSystem),
}

pub(crate) struct CovarianceSystem {
    pub obs: Vec<Observation>,
    pub kf: DMatrix<f64>,
    pub fact: Factorization,
}

impl CovarianceSystem {
    pub fn build(hyper: &Hyperparameters, data: &TrainingSet, kind: SolverKind) -> Result<Self> {
        hyper.validate()?;
        if hyper.tasks() != data.tasks() {
            return Err(Error::DimensionError {
                expected: data.tasks(),
                got: hyper.tasks(),
            });
        }
        let obs = data.observations();
        if obs.is_empty() {
            return Err(Error::DegenerateData("no observed targets".into()));
        }
        let kf = hyper.task.matrix();
        let noise: Vec<f64> = (0..hyper.tasks()).map(|l| hyper.noise.variance(l)).collect();
        let fact = if kind == SolverKind::Structured && spectral_eligible(hyper, data) {
            Factorization::Spectral(SpectralSystem::build(hyper, data, &kf, &noise)?)
        } else {
            Factorization::Dense(build_dense(hyper, data, &obs, &kf, &noise)?)
        };
        Ok(Self { obs, kf, fact })
    }

    pub fn kind(&self) -> SolverKind {
        match self.fact {
            Factorization::Dense(_) => SolverKind::Dense,
            Factorization::Spectral(_) => SolverKind::Structured,
        }
    }

    pub fn jitter(&self) -> f64 {
        match &self.fact {
            Factorization::Dense(d) => d.chol.jitter,
            Factorization::Spectral(s) => s.jitter,
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match &self.fact {
            Factorization::Dense(d) => d.chol.solve(rhs),
            Factorization::Spectral(s) => s.solve(rhs, self.kf.nrows()),
        }
    }

    pub fn log_det(&self) -> f64 {
        match &self.fact {
            Factorization::Dense(d) => d.chol.log_det(),
            Factorization::Spectral(s) => s.log_det,
        }
    }

    /// `b^T Σ^{-1} b`
    pub fn inverse_quadratic(&self, b: &[f64]) -> f64 {
        match &self.fact {
            Factorization::Dense(d) => {
                let mut y = DVector::from_column_slice(b);
                if !d.chol.factor.l().solve_lower_triangular_mut(&mut y) {
                    return f64::NAN;
                }
                y.norm_squared()
            }
            Factorization::Spectral(s) => {
                let x = s.solve(b, self.kf.nrows());
                b.iter().zip(&x).map(|(p, q)| p * q).sum()
            }
        }
    }
}

fn build_dense(
    hyper: &Hyperparameters,
    data: &TrainingSet,
    obs: &[Observation],
    kf: &DMatrix<f64>,
    noise: &[f64],
) -> Result<DenseSystem> {
    let n = data.len();
    let mut ktime = DMatrix::zeros(n, n);
    let mut dktime = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (k, dk) = hyper.kernel.eval_with_grad(data.inputs[i] - data.inputs[j]);
            ktime[(i, j)] = k;
            ktime[(j, i)] = k;
            dktime[(i, j)] = dk;
            dktime[(j, i)] = dk;
        }
    }
    let m = obs.len();
    let sigma = DMatrix::from_fn(m, m, |p, q| {
        let (a, b) = (obs[p], obs[q]);
        let mut v = kf[(a.task, b.task)] * ktime[(a.point, b.point)];
        if p == q {
            v += noise[a.task];
        }
        v
    });
    let chol = JitteredCholesky::new(&sigma, 0.0)?;
    Ok(DenseSystem { chol, ktime, dktime })
}

impl SpectralSystem {
    fn build(hyper: &Hyperparameters, data: &TrainingSet, kf: &DMatrix<f64>, noise: &[f64]) -> Result<Self> {
        let n = data.len();
        let t = kf.nrows();
        let spacing = crate::markov::WEEK_HOURS / n as f64;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut col: Vec<Complex<f64>> = Vec::with_capacity(n);
        let mut dcol: Vec<Complex<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let (k, dk) = hyper.kernel.eval_with_grad(i as f64 * spacing);
            col.push(Complex::new(k, 0.0));
            dcol.push(Complex::new(dk, 0.0));
        }
        forward.process(&mut col);
        forward.process(&mut dcol);
        let lambda: Vec<f64> = col.iter().map(|c| c.re).collect();
        let dlambda: Vec<f64> = dcol.iter().map(|c| c.re).collect();

        let block = |j: usize, jitter: f64| {
            let mut b = kf * lambda[j];
            for l in 0..t {
                b[(l, l)] += noise[l] + jitter;
            }
            b
        };
        let try_factor = |jitter: f64| -> Option<(Vec<DMatrix<f64>>, f64)> {
            let mut inv = Vec::with_capacity(n);
            let mut log_det = 0.0;
            for j in 0..n {
                let c = block(j, jitter).cholesky()?;
                log_det += 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                inv.push(c.inverse());
            }
            Some((inv, log_det))
        };

        // same escalation rule as the dense factorization of the full matrix
        let mut jitter = 0.0;
        let mut result = try_factor(jitter);
        if result.is_none() {
            let mean_diag = hyper.kernel.signal_variance * kf.trace() / t as f64
                + noise.iter().sum::<f64>() / t as f64;
            jitter = DEFAULT_RELATIVE_JITTER * mean_diag;
            for _ in 0..JITTER_ESCALATIONS {
                result = try_factor(jitter);
                if result.is_some() {
                    break;
                }
                jitter *= 10.0;
            }
        }
        let (block_inverse, log_det) = result.ok_or(Error::NotPositiveDefinite { jitter })?;
        Ok(Self {
            n,
            lambda,
            dlambda,
            block_inverse,
            log_det,
            jitter,
            forward,
            inverse,
        })
    }

    pub fn fft(&self, x: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    pub fn ifft_real(&self, mut buf: Vec<Complex<f64>>) -> Vec<f64> {
        self.inverse.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.into_iter().map(|c| c.re * s).collect()
    }

    /// Circulant product with eigenvalues `weights`.
    pub fn circulant_apply(&self, weights: &[f64], x: &[f64]) -> Vec<f64> {
        let mut f = self.fft(x);
        for (v, w) in f.iter_mut().zip(weights) {
            *v *= *w;
        }
        self.ifft_real(f)
    }

    /// `Σ^{-1} x` for a task-major vector of length `T * n`.
    pub fn solve(&self, x: &[f64], t: usize) -> Vec<f64> {
        let n = self.n;
        let hat: Vec<Vec<Complex<f64>>> = (0..t).map(|l| self.fft(&x[l * n..(l + 1) * n])).collect();
        let mut out_hat = vec![vec![Complex::new(0.0, 0.0); n]; t];
        for j in 0..n {
            let inv = &self.block_inverse[j];
            for l in 0..t {
                let mut acc = Complex::new(0.0, 0.0);
                for l2 in 0..t {
                    acc += hat[l2][j] * inv[(l, l2)];
                }
                out_hat[l][j] = acc;
            }
        }
        let mut out = Vec::with_capacity(t * n);
        for h in out_hat {
            out.extend(self.ifft_real(h));
        }
        out
    }
}
