//! Multi-task Gaussian process over the four transition probabilities with
//! an intrinsic coregionalization covariance `K^f ⊗ K + D ⊗ I`.

mod cross;
pub mod data;
pub mod fit;
pub mod grid;
pub mod hyper;
pub mod kernel;
pub mod likelihood;
pub mod model;
pub mod predict;
pub mod system;

pub use data::{Observation, TrainingSet};
pub use hyper::{Hyperparameters, NoiseModel, ParamSlot, TaskCovariance, NOISE_FLOOR};
pub use kernel::{kernel_eval, KernelFamily, KernelSpec};
pub use likelihood::{evaluate, nll, nll_grad, Evaluation, PenaltySpec};
pub use system::{spectral_eligible, SolverKind};
pub use predict::{predict, predict_single_task, MultiTaskGP, PredictiveDistribution, VARIANCE_CLAMP};
pub use fit::{fit, fit_staged, fit_with_trace, FitConfig, FitOutcome, PenaltySchedule, TrajectoryPoint};
pub use grid::{build_grid_covariance, GridLayout};
pub use model::{load_model, save_model, ModelDocument, MODEL_VERSION};
