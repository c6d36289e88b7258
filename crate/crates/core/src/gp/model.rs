//! JSON model documents: hyperparameters in log space, the binning scheme
//! and the embedded training data with its digest.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::data::TrainingSet;
use super::hyper::{Hyperparameters, NoiseModel, TaskCovariance};
use super::kernel::{KernelFamily, KernelSpec};
use super::predict::MultiTaskGP;
use super::system::SolverKind;
use crate::error::{Error, Result};
use crate::markov::TimeBinScheme;

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelDocument {
    pub family: KernelFamily,
    pub log_lengthscale: f64,
    pub log_signal_variance: f64,
    pub periodic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFactorDocument {
    /// `log L[r][r]`
    pub log_diagonal: Vec<f64>,
    /// Row `r` holds `L[r][0..r]`.
    pub lower: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseDocument {
    Shared { log_variance: f64 },
    PerTask { log_variance: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    /// Bins per hour of the training grid, absent for free-form inputs.
    pub bins_per_hour: Option<u32>,
    pub kernel: KernelDocument,
    pub task_factor: TaskFactorDocument,
    pub noise: NoiseDocument,
    pub mean: Vec<f64>,
    pub solver: SolverKind,
    pub training_digest: String,
    pub training: TrainingSet,
}

impl ModelDocument {
    pub fn from_model(model: &MultiTaskGP) -> Self {
        let h = model.hyper();
        let l = h.task.factor();
        let t = h.tasks();
        Self {
            version: MODEL_VERSION,
            bins_per_hour: model.data().scheme.map(|s| s.bins_per_hour()),
            kernel: KernelDocument {
                family: h.kernel.family,
                log_lengthscale: h.kernel.lengthscale.ln(),
                log_signal_variance: h.kernel.signal_variance.ln(),
                periodic: h.kernel.periodic,
            },
            task_factor: TaskFactorDocument {
                log_diagonal: (0..t).map(|r| l[(r, r)].ln()).collect(),
                lower: (0..t).map(|r| (0..r).map(|c| l[(r, c)]).collect()).collect(),
            },
            noise: match &h.noise {
                NoiseModel::Shared(v) => NoiseDocument::Shared { log_variance: v.ln() },
                NoiseModel::PerTask(v) => NoiseDocument::PerTask {
                    log_variance: v.iter().map(|x| x.ln()).collect(),
                },
            },
            mean: h.mean.clone(),
            solver: model.requested_solver(),
            training_digest: model.data().digest(),
            training: model.data().clone(),
        }
    }

    pub fn hyperparameters(&self) -> Result<Hyperparameters> {
        let t = self.task_factor.log_diagonal.len();
        if self.task_factor.lower.len() != t || self.task_factor.lower.iter().enumerate().any(|(r, row)| row.len() != r) {
            return Err(Error::InvalidConfig("task factor rows have the wrong lengths".into()));
        }
        let factor = DMatrix::from_fn(t, t, |r, c| match r.cmp(&c) {
            std::cmp::Ordering::Equal => self.task_factor.log_diagonal[r].exp(),
            std::cmp::Ordering::Greater => self.task_factor.lower[r][c],
            std::cmp::Ordering::Less => 0.0,
        });
        let kernel = KernelSpec {
            family: self.kernel.family,
            lengthscale: self.kernel.log_lengthscale.exp(),
            signal_variance: self.kernel.log_signal_variance.exp(),
            periodic: self.kernel.periodic,
        };
        let noise = match &self.noise {
            NoiseDocument::Shared { log_variance } => NoiseModel::Shared(log_variance.exp()),
            NoiseDocument::PerTask { log_variance } => NoiseModel::PerTask(log_variance.iter().map(|x| x.exp()).collect()),
        };
        Hyperparameters::new(kernel, TaskCovariance::from_factor(factor)?, noise, self.mean.clone())
    }

    pub fn scheme(&self) -> Result<Option<TimeBinScheme>> {
        self.bins_per_hour.map(TimeBinScheme::new).transpose()
    }

    /// Validates version and digest, then rebuilds the model.
    pub fn into_model(self) -> Result<MultiTaskGP> {
        if self.version != MODEL_VERSION {
            return Err(Error::ModelMismatch(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                self.version
            )));
        }
        let digest = self.training.digest();
        if digest != self.training_digest {
            return Err(Error::ModelMismatch("training data digest does not match".into()));
        }
        let scheme = self.scheme()?;
        if scheme != self.training.scheme {
            return Err(Error::ModelMismatch("scheme does not match the training data".into()));
        }
        let hyper = self.hyperparameters()?;
        MultiTaskGP::new(hyper, self.training, self.solver)
    }
}

pub fn save_model(model: &MultiTaskGP, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&ModelDocument::from_model(model))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MultiTaskGP> {
    let text = std::fs::read_to_string(path)?;
    let doc: ModelDocument = serde_json::from_str(&text)?;
    doc.into_model()
}
