//! Hyperparameter fitting: Adam on the unconstrained parameters with a
//! linearly decaying step, optional BFGS polishing, and staged penalty
//! weights for the constrained objective.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::TrainingSet;
use super::hyper::{Hyperparameters, ParamSlot};
use super::kernel::KernelFamily;
use super::likelihood::{evaluate, Evaluation, PenaltySpec};
use super::predict::MultiTaskGP;
use super::system::SolverKind;
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Evaluation failures tolerated (each halves the step) before giving up.
const MAX_FAILURES: usize = 10;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitConfig {
    /// Adam iterations per stage.
    pub iterations: usize,
    pub learning_rate: f64,
    pub kernel: KernelFamily,
    pub periodic: bool,
    pub per_task_noise: bool,
    pub solver: SolverKind,
    /// Keep `K^f` diagonal (no information shared between tasks).
    pub independent_tasks: bool,
    /// BFGS iterations run after Adam in each stage.
    pub refine_iterations: usize,
    /// Starting point; the means are always reset to the training averages.
    #[serde(skip)]
    pub init: Option<Hyperparameters>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 0.05,
            kernel: KernelFamily::Rbf,
            periodic: true,
            per_task_noise: true,
            solver: SolverKind::Structured,
            independent_tasks: false,
            refine_iterations: 0,
            init: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub stage: usize,
    pub penalty_weight: f64,
    pub objective: f64,
    pub nll: f64,
}

#[derive(Debug)]
pub struct FitOutcome {
    pub model: MultiTaskGP,
    pub trajectory: Vec<TrajectoryPoint>,
    pub initial_nll: f64,
    pub final_nll: f64,
    pub final_objective: f64,
    pub final_penalty: f64,
    pub gradient_norm: f64,
    pub wall_time_ms: f64,
}

/// Penalty applied during fitting: constraint points, margin and the weight
/// used at each successive stage.
#[derive(Clone, Debug)]
pub struct PenaltySchedule<'a> {
    pub points: &'a [f64],
    pub margin: f64,
    pub weights: Vec<f64>,
}

pub fn fit(data: &TrainingSet, config: &FitConfig) -> Result<MultiTaskGP> {
    Ok(fit_with_trace(data, config)?.model)
}

pub fn fit_with_trace(data: &TrainingSet, config: &FitConfig) -> Result<FitOutcome> {
    fit_staged(data, config, None)
}

pub fn initial_hyperparameters(data: &TrainingSet, config: &FitConfig) -> Result<Hyperparameters> {
    let mean = data.task_means();
    let mut h = match &config.init {
        Some(h) => {
            if h.tasks() != data.tasks() {
                return Err(Error::DimensionError {
                    expected: data.tasks(),
                    got: h.tasks(),
                });
            }
            let mut h = h.clone();
            h.mean = mean;
            h
        }
        None => {
            let mut h = Hyperparameters::initial(config.kernel, data.pooled_variance(), mean, config.per_task_noise);
            h.kernel.periodic = config.periodic;
            h
        }
    };
    h.validate()?;
    if config.independent_tasks {
        let t = h.tasks();
        let l = h.task.factor();
        let diag = DMatrix::from_fn(t, t, |r, c| if r == c { l[(r, r)] } else { 0.0 });
        h.task = super::hyper::TaskCovariance::from_factor(diag)?;
    }
    Ok(h)
}

pub fn check_training_data(data: &TrainingSet) -> Result<()> {
    for l in 0..data.tasks() {
        let n = data.observed_count(l);
        if n < 2 {
            return Err(Error::DegenerateData(format!(
                "task {} has {n} observed bins, at least 2 are needed",
                data.task_names[l]
            )));
        }
    }
    Ok(())
}

/// Runs one optimization stage per penalty weight (a single unpenalized
/// stage when `penalty` is `None`), each warm-started from the previous one.
pub fn fit_staged(data: &TrainingSet, config: &FitConfig, penalty: Option<&PenaltySchedule>) -> Result<FitOutcome> {
    let start = Instant::now();
    check_training_data(data)?;
    if config.iterations == 0 && config.refine_iterations == 0 {
        return Err(Error::InvalidConfig("at least one iteration is required".into()));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::InvalidConfig("learning rate must be positive".into()));
    }
    let mut hyper = initial_hyperparameters(data, config)?;
    let initial_nll = evaluate(&hyper, data, config.solver, None, false)?.nll;

    let weights: Vec<Option<f64>> = match penalty {
        None => vec![None],
        Some(p) => p.weights.iter().map(|&w| Some(w)).collect(),
    };
    let mut trajectory = Vec::new();
    let mut last = None;
    for (stage, w) in weights.iter().enumerate() {
        let spec = match (penalty, w) {
            (Some(p), Some(w)) => Some(PenaltySpec {
                points: p.points,
                weight: *w,
                margin: p.margin,
            }),
            _ => None,
        };
        let mut opt = Optimizer::new(data, config, spec.as_ref(), stage, &mut trajectory);
        let (h, e) = opt.run(&hyper)?;
        hyper = h;
        last = Some(e);
    }
    let last = last.expect("at least one stage");
    let gradient_norm = last.gradient.as_ref().map(|g| DVector::from_column_slice(g).norm()).unwrap_or(0.0);
    let model = MultiTaskGP::new(hyper, data.clone(), config.solver)?;
    Ok(FitOutcome {
        model,
        trajectory,
        initial_nll,
        final_nll: last.nll,
        final_objective: last.objective,
        final_penalty: last.penalty,
        gradient_norm,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn bounds(slot: ParamSlot) -> (f64, f64) {
    match slot {
        ParamSlot::LogLengthscale => (0.01f64.ln(), 500f64.ln()),
        ParamSlot::LogSignalVariance => (-20.0, 10.0),
        ParamSlot::LogTaskDiagonal(_) => (-10.0, 5.0),
        ParamSlot::TaskOffDiagonal(..) => (-50.0, 50.0),
        ParamSlot::LogNoise(_) => (-20.0, 5.0),
    }
}

struct Optimizer<'a, 'b> {
    data: &'a TrainingSet,
    config: &'a FitConfig,
    penalty: Option<&'a PenaltySpec<'a>>,
    stage: usize,
    trajectory: &'b mut Vec<TrajectoryPoint>,
    failure_trace: Vec<f64>,
}

impl<'a, 'b> Optimizer<'a, 'b> {
    fn new(
        data: &'a TrainingSet,
        config: &'a FitConfig,
        penalty: Option<&'a PenaltySpec<'a>>,
        stage: usize,
        trajectory: &'b mut Vec<TrajectoryPoint>,
    ) -> Self {
        Self {
            data,
            config,
            penalty,
            stage,
            trajectory,
            failure_trace: Vec::new(),
        }
    }

    fn eval(&self, template: &Hyperparameters, theta: &[f64], frozen: &[bool]) -> Result<(Hyperparameters, Evaluation)> {
        let h = template.with_unconstrained(theta)?;
        let mut e = evaluate(&h, self.data, self.config.solver, self.penalty, true)?;
        if !e.objective.is_finite() {
            return Err(Error::NotPositiveDefinite { jitter: e.jitter });
        }
        if let Some(g) = e.gradient.as_mut() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NotPositiveDefinite { jitter: e.jitter });
            }
            for (gi, &f) in g.iter_mut().zip(frozen) {
                if f {
                    *gi = 0.0;
                }
            }
        }
        Ok((h, e))
    }

    fn record(&mut self, e: &Evaluation) {
        self.failure_trace.push(e.objective);
        let iteration = self.trajectory.len();
        self.trajectory.push(TrajectoryPoint {
            iteration,
            stage: self.stage,
            penalty_weight: self.penalty.map(|p| p.weight).unwrap_or(0.0),
            objective: e.objective,
            nll: e.nll,
        });
    }

    fn failed(&self, reason: String) -> Error {
        Error::OptimizationFailed {
            iteration: self.trajectory.len(),
            reason,
            trace: self.failure_trace.clone(),
        }
    }

    /// Best iterate seen (never worse than `start`) and its evaluation.
    fn run(&mut self, start: &Hyperparameters) -> Result<(Hyperparameters, Evaluation)> {
        let slots = start.slots();
        let frozen: Vec<bool> = slots
            .iter()
            .map(|s| self.config.independent_tasks && matches!(s, ParamSlot::TaskOffDiagonal(..)))
            .collect();
        let mut theta = start.to_unconstrained();
        let (h0, e0) = self.eval(start, &theta, &frozen)?;
        let mut best = (h0, e0.clone(), theta.clone());
        let mut current = e0;

        let iters = self.config.iterations;
        let mut m = vec![0.0; theta.len()];
        let mut v = vec![0.0; theta.len()];
        let mut step_scale = 1.0;
        let mut failures = 0;
        let mut k = 0;
        while k < iters {
            self.record(&current);
            let g = current.gradient.clone().expect("gradient requested");
            let lr = self.config.learning_rate * step_scale * (1.0 - 0.9 * k as f64 / iters as f64);
            let t = (k + 1) as f64;
            let mut next = theta.clone();
            for i in 0..theta.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let mh = m[i] / (1.0 - BETA1.powf(t));
                let vh = v[i] / (1.0 - BETA2.powf(t));
                let (lo, hi) = bounds(slots[i]);
                next[i] = (theta[i] - lr * mh / (vh.sqrt() + ADAM_EPS)).clamp(lo, hi);
            }
            match self.eval(start, &next, &frozen) {
                Ok((h, e)) => {
                    theta = next;
                    if e.objective < best.1.objective {
                        best = (h, e.clone(), theta.clone());
                    }
                    current = e;
                    k += 1;
                }
                Err(err) => {
                    failures += 1;
                    if failures > MAX_FAILURES {
                        return Err(self.failed(format!("objective evaluation kept failing: {err}")));
                    }
                    // stay at the last good iterate with a smaller step
                    step_scale *= 0.5;
                    m.iter_mut().for_each(|x| *x = 0.0);
                    v.iter_mut().for_each(|x| *x = 0.0);
                }
            }
        }
        if iters > 0 {
            self.record(&current);
        }

        if self.config.refine_iterations > 0 {
            best = self.bfgs(start, best, &frozen)?;
        }
        Ok((best.0, best.1))
    }

    fn bfgs(
        &mut self,
        template: &Hyperparameters,
        start: (Hyperparameters, Evaluation, Vec<f64>),
        frozen: &[bool],
    ) -> Result<(Hyperparameters, Evaluation, Vec<f64>)> {
        let (mut h, mut e, theta) = start;
        let n = theta.len();
        let mut x = DVector::from_vec(theta);
        let mut g = DVector::from_vec(e.gradient.clone().expect("gradient"));
        let mut hinv = DMatrix::<f64>::identity(n, n);
        let mut first = true;
        for _ in 0..self.config.refine_iterations {
            if g.norm() < 1e-9 {
                break;
            }
            let mut d = -(&hinv * &g);
            let mut slope = g.dot(&d);
            if slope >= 0.0 {
                hinv = DMatrix::identity(n, n);
                first = true;
                d = -g.clone();
                slope = -g.norm_squared();
            }
            // no coordinate moves more than one unit of log-scale per step
            let mut step = (1.0 / d.amax()).min(1.0);
            let mut accepted = None;
            for _ in 0..40 {
                let trial = &x + &d * step;
                if let Ok((ht, et)) = self.eval(template, trial.as_slice(), frozen) {
                    if et.objective <= e.objective + 1e-4 * step * slope {
                        accepted = Some((trial, ht, et));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((xn, hn, en)) = accepted else { break };
            let gn = DVector::from_vec(en.gradient.clone().expect("gradient"));
            let s = &xn - &x;
            let y = &gn - &g;
            let sy = s.dot(&y);
            if sy > 1e-12 {
                if first {
                    hinv *= sy / y.norm_squared();
                    first = false;
                }
                let rho = 1.0 / sy;
                let i = DMatrix::<f64>::identity(n, n);
                let a = &i - &s * y.transpose() * rho;
                let b = &i - &y * s.transpose() * rho;
                hinv = &a * &hinv * &b + &s * s.transpose() * rho;
            }
            x = xn;
            g = gn;
            h = hn;
            e = en;
            self.record(&e);
        }
        Ok((h, e, x.as_slice().to_vec()))
    }
}
