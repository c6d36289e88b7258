use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::TrainingSet;
use super::hyper::Hyperparameters;
use super::kernel::KernelSpec;
use super::system::{CovarianceSystem, SolverKind};
use crate::error::{Error, Result};

/// Round-off below this magnitude is clamped to zero variance.
pub const VARIANCE_CLAMP: f64 = 1e-10;

/// Latent posterior at one query input, one entry per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub input: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Fitted model: hyperparameters, training data and the factorization of the
/// training covariance. Immutable; build a new one to change anything.
pub struct MultiTaskGP {
    hyper: Hyperparameters,
    data: TrainingSet,
    requested: SolverKind,
    system: CovarianceSystem,
    /// `Σ^{-1} (a - μ)` scattered onto `(point, task)`; zero at masked entries.
    alpha_grid: DMatrix<f64>,
}

impl std::fmt::Debug for MultiTaskGP {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultiTaskGP")
            .field("hyper", &self.hyper)
            .field("points", &self.data.len())
            .field("solver", &self.system.kind())
            .finish()
    }
}

impl MultiTaskGP {
    pub fn new(hyper: Hyperparameters, data: TrainingSet, solver: SolverKind) -> Result<Self> {
        let system = CovarianceSystem::build(&hyper, &data, solver)?;
        let resid: Vec<f64> = system.obs.iter().map(|o| o.value - hyper.mean[o.task]).collect();
        let alpha = system.solve(&resid);
        let mut alpha_grid = DMatrix::zeros(data.len(), hyper.tasks());
        for (o, a) in system.obs.iter().zip(&alpha) {
            alpha_grid[(o.point, o.task)] = *a;
        }
        Ok(Self {
            hyper,
            data,
            requested: solver,
            system,
            alpha_grid,
        })
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn data(&self) -> &TrainingSet {
        &self.data
    }

    pub fn requested_solver(&self) -> SolverKind {
        self.requested
    }

    /// Solver actually in use after any fallback.
    pub fn solver(&self) -> SolverKind {
        self.system.kind()
    }

    pub fn jitter(&self) -> f64 {
        self.system.jitter()
    }

    pub fn task_covariance(&self) -> &DMatrix<f64> {
        &self.system.kf
    }

    /// Same hyperparameters, different training data.
    pub fn refit_data(&self, data: TrainingSet) -> Result<Self> {
        Self::new(self.hyper.clone(), data, self.requested)
    }

    fn cross_row(&self, x: f64) -> Vec<f64> {
        self.data.inputs.iter().map(|&xi| self.hyper.kernel.eval(x - xi)).collect()
    }

    pub fn predict_mean(&self, x: f64) -> Vec<f64> {
        let kc = self.cross_row(x);
        let t = self.hyper.tasks();
        // r[l'] = Σ_i k(x, t_i) α[i, l']
        let r: Vec<f64> = (0..t)
            .map(|l2| kc.iter().enumerate().map(|(i, k)| k * self.alpha_grid[(i, l2)]).sum())
            .collect();
        (0..t)
            .map(|l| self.hyper.mean[l] + (0..t).map(|l2| self.system.kf[(l, l2)] * r[l2]).sum::<f64>())
            .collect()
    }

    pub fn predict_means(&self, queries: &[f64]) -> Vec<Vec<f64>> {
        queries.par_iter().map(|&x| self.predict_mean(x)).collect()
    }

    fn predict_one(&self, x: f64) -> Result<PredictiveDistribution> {
        let kc = self.cross_row(x);
        let t = self.hyper.tasks();
        let mean = self.predict_mean(x);
        let mut variance = Vec::with_capacity(t);
        for l in 0..t {
            let b: Vec<f64> = self
                .system
                .obs
                .iter()
                .map(|o| self.system.kf[(l, o.task)] * kc[o.point])
                .collect();
            let prior = self.hyper.kernel.signal_variance * self.system.kf[(l, l)];
            let v = prior - self.system.inverse_quadratic(&b);
            variance.push(clamp_variance(v)?);
        }
        Ok(PredictiveDistribution { input: x, mean, variance })
    }

    /// Posterior mean and latent variance per task at each query.
    pub fn predict(&self, queries: &[f64]) -> Result<Vec<PredictiveDistribution>> {
        queries.par_iter().map(|&x| self.predict_one(x)).collect()
    }
}

fn clamp_variance(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -VARIANCE_CLAMP {
        Ok(0.0)
    } else {
        Err(Error::NegativeVariance(v))
    }
}

pub fn predict(model: &MultiTaskGP, queries: &[f64]) -> Result<Vec<PredictiveDistribution>> {
    model.predict(queries)
}

/// Scalar closed form for one task:
/// `μ* = μ + k*^T (K + σ²I)^{-1} (a - μ)`, `σ*² = k(0) - k*^T (K + σ²I)^{-1} k*`.
pub fn predict_single_task(
    kernel: &KernelSpec,
    noise_variance: f64,
    mean: f64,
    inputs: &[f64],
    targets: &[f64],
    queries: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let n = inputs.len();
    if targets.len() != n {
        return Err(Error::DimensionError {
            expected: n,
            got: targets.len(),
        });
    }
    let noise = noise_variance.max(super::hyper::NOISE_FLOOR);
    let k = DMatrix::from_fn(n, n, |i, j| {
        kernel.eval(inputs[i] - inputs[j]) + if i == j { noise } else { 0.0 }
    });
    let chol = crate::linalg::JitteredCholesky::new(&k, 0.0)?;
    let resid: Vec<f64> = targets.iter().map(|a| a - mean).collect();
    let alpha = DVector::from_vec(chol.solve(&resid));
    queries
        .iter()
        .map(|&x| {
            let ks = DVector::from_iterator(n, inputs.iter().map(|&xi| kernel.eval(x - xi)));
            let v = DVector::from_vec(chol.solve(ks.as_slice()));
            Ok((mean + ks.dot(&alpha), clamp_variance(kernel.eval(0.0) - ks.dot(&v))?))
        })
        .collect()
}
