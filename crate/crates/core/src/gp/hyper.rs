use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::kernel::{KernelFamily, KernelSpec};
use crate::error::{Error, Result};

/// Lower bound applied to every noise variance.
pub const NOISE_FLOOR: f64 = 1e-8;

/// Inter-task covariance `K^f = L L^T` held through its Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskCovariance {
    factor: DMatrix<f64>,
}

impl TaskCovariance {
    /// `factor` must be lower triangular with a strictly positive diagonal.
    pub fn from_factor(factor: DMatrix<f64>) -> Result<Self> {
        let t = factor.nrows();
        if t == 0 || factor.ncols() != t {
            return Err(Error::InvalidConfig("task factor must be square and non-empty".into()));
        }
        for r in 0..t {
            if !(factor[(r, r)] > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "task factor diagonal {r} must be positive"
                )));
            }
            for c in r + 1..t {
                if factor[(r, c)] != 0.0 {
                    return Err(Error::InvalidConfig("task factor must be lower triangular".into()));
                }
            }
        }
        Ok(Self { factor })
    }

    pub fn identity(tasks: usize) -> Self {
        Self {
            factor: DMatrix::identity(tasks, tasks),
        }
    }

    pub fn tasks(&self) -> usize {
        self.factor.nrows()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// One variance for all tasks.
    Shared(f64),
    /// Diagonal `D`, one variance per task.
    PerTask(Vec<f64>),
}

impl NoiseModel {
    pub fn variance(&self, task: usize) -> f64 {
        let v = match self {
            NoiseModel::Shared(v) => *v,
            NoiseModel::PerTask(vs) => vs[task],
        };
        v.max(NOISE_FLOOR)
    }

    fn raw_count(&self) -> usize {
        match self {
            NoiseModel::Shared(_) => 1,
            NoiseModel::PerTask(vs) => vs.len(),
        }
    }
}

/// Full hyperparameter set. The per-task constant means are fixed at the
/// training averages and are not optimized.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparameters {
    pub kernel: KernelSpec,
    pub task: TaskCovariance,
    pub noise: NoiseModel,
    pub mean: Vec<f64>,
}

/// Which unconstrained coordinate a slot of the parameter vector holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamSlot {
    LogLengthscale,
    LogSignalVariance,
    /// `log L[r][r]`
    LogTaskDiagonal(usize),
    /// `L[r][c]`, `c < r`
    TaskOffDiagonal(usize, usize),
    /// Log variance of the shared noise (`None`) or of one task.
    LogNoise(Option<usize>),
}

impl Hyperparameters {
    pub fn new(kernel: KernelSpec, task: TaskCovariance, noise: NoiseModel, mean: Vec<f64>) -> Result<Self> {
        let h = Self {
            kernel,
            task,
            noise,
            mean,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn tasks(&self) -> usize {
        self.task.tasks()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.tasks();
        if !(self.kernel.lengthscale > 0.0 && self.kernel.lengthscale.is_finite()) {
            return Err(Error::InvalidConfig("lengthscale must be positive".into()));
        }
        if !(self.kernel.signal_variance > 0.0 && self.kernel.signal_variance.is_finite()) {
            return Err(Error::InvalidConfig("signal variance must be positive".into()));
        }
        if self.mean.len() != t {
            return Err(Error::DimensionError {
                expected: t,
                got: self.mean.len(),
            });
        }
        if let NoiseModel::PerTask(v) = &self.noise {
            if v.len() != t {
                return Err(Error::DimensionError {
                    expected: t,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    /// Layout of [`Hyperparameters::to_unconstrained`].
    pub fn slots(&self) -> Vec<ParamSlot> {
        let t = self.tasks();
        let mut slots = vec![ParamSlot::LogLengthscale, ParamSlot::LogSignalVariance];
        for r in 0..t {
            for c in 0..r {
                slots.push(ParamSlot::TaskOffDiagonal(r, c));
            }
            slots.push(ParamSlot::LogTaskDiagonal(r));
        }
        match &self.noise {
            NoiseModel::Shared(_) => slots.push(ParamSlot::LogNoise(None)),
            NoiseModel::PerTask(v) => slots.extend((0..v.len()).map(|l| ParamSlot::LogNoise(Some(l)))),
        }
        slots
    }

    pub fn param_count(&self) -> usize {
        2 + self.tasks() * (self.tasks() + 1) / 2 + self.noise.raw_count()
    }

    pub fn to_unconstrained(&self) -> Vec<f64> {
        let l = self.task.factor();
        self.slots()
            .into_iter()
            .map(|s| match s {
                ParamSlot::LogLengthscale => self.kernel.lengthscale.ln(),
                ParamSlot::LogSignalVariance => self.kernel.signal_variance.ln(),
                ParamSlot::LogTaskDiagonal(r) => l[(r, r)].ln(),
                ParamSlot::TaskOffDiagonal(r, c) => l[(r, c)],
                ParamSlot::LogNoise(None) => match &self.noise {
                    NoiseModel::Shared(v) => v.ln(),
                    NoiseModel::PerTask(_) => unreachable!(),
                },
                ParamSlot::LogNoise(Some(i)) => match &self.noise {
                    NoiseModel::PerTask(v) => v[i].ln(),
                    NoiseModel::Shared(_) => unreachable!(),
                },
            })
            .collect()
    }

    /// Same structure as `self` with values taken from `theta`.
    pub fn with_unconstrained(&self, theta: &[f64]) -> Result<Self> {
        let slots = self.slots();
        if theta.len() != slots.len() {
            return Err(Error::DimensionError {
                expected: slots.len(),
                got: theta.len(),
            });
        }
        let t = self.tasks();
        let mut kernel = self.kernel;
        let mut factor = DMatrix::zeros(t, t);
        let mut noise = self.noise.clone();
        for (slot, &x) in slots.iter().zip(theta) {
            match *slot {
                ParamSlot::LogLengthscale => kernel.lengthscale = x.exp(),
                ParamSlot::LogSignalVariance => kernel.signal_variance = x.exp(),
                ParamSlot::LogTaskDiagonal(r) => factor[(r, r)] = x.exp(),
                ParamSlot::TaskOffDiagonal(r, c) => factor[(r, c)] = x,
                ParamSlot::LogNoise(None) => noise = NoiseModel::Shared(x.exp()),
                ParamSlot::LogNoise(Some(i)) => {
                    if let NoiseModel::PerTask(v) = &mut noise {
                        v[i] = x.exp();
                    }
                }
            }
        }
        Self::new(kernel, TaskCovariance::from_factor(factor)?, noise, self.mean.clone())
    }

    /// Default starting point: RBF-family kernel with 12 h lengthscale, signal
    /// variance equal to the pooled target variance, independent unit task
    /// covariance and noise variance 0.05^2.
    pub fn initial(family: KernelFamily, target_variance: f64, mean: Vec<f64>, per_task_noise: bool) -> Self {
        let t = mean.len();
        let sf2 = if target_variance > 1e-6 { target_variance } else { 1e-2 };
        let noise = if per_task_noise {
            NoiseModel::PerTask(vec![0.05 * 0.05; t])
        } else {
            NoiseModel::Shared(0.05 * 0.05)
        };
        Self {
            kernel: KernelSpec {
                family,
                lengthscale: 12.0,
                signal_variance: sf2,
                periodic: true,
            },
            task: TaskCovariance::identity(t),
            noise,
            mean,
        }
    }
}
