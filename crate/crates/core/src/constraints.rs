//! Constraint points, the penalized training objective and violation
//! reports for the stochasticity and non-negativity of the posterior mean.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{
    evaluate, fit_staged, FitConfig, Hyperparameters, MultiTaskGP, PenaltySchedule, PenaltySpec, SolverKind,
    TrainingSet, TrajectoryPoint,
};
use crate::markov::{TimeBinScheme, WEEK_HOURS, TASK_MM, TASK_MP, TASK_PM, TASK_PP};

/// Default tolerance above which a point counts as violating.
pub const DEFAULT_REPORT_TOLERANCE: f64 = 1e-3;

/// Violation statistics of one constraint family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationStats {
    pub max: f64,
    pub mean: f64,
    /// Number of checks whose violation exceeds the report tolerance.
    pub count_violating: usize,
    pub evaluated: usize,
}

impl ViolationStats {
    pub fn from_values(violations: &[f64], tol: f64) -> Self {
        let n = violations.len();
        Self {
            max: violations.iter().copied().fold(0.0, f64::max),
            mean: if n == 0 { 0.0 } else { violations.iter().sum::<f64>() / n as f64 },
            count_violating: violations.iter().filter(|&&v| v > tol).count(),
            evaluated: n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFamilies {
    /// `|a_pp + a_pm - 1|`
    pub stochasticity_pause: ViolationStats,
    /// `|a_mp + a_mm - 1|`
    pub stochasticity_move: ViolationStats,
    /// `max(0, -a_ij)`
    pub nonnegativity: ViolationStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub families: ConstraintFamilies,
    /// Smallest probability value seen.
    pub min_value: f64,
    pub tolerance: f64,
    pub points: usize,
    pub wall_time_ms: f64,
}

impl ConstraintReport {
    pub fn new(
        pause: ViolationStats,
        moving: ViolationStats,
        nonneg: ViolationStats,
        min_value: f64,
        tolerance: f64,
        points: usize,
        wall_time_ms: f64,
    ) -> Self {
        Self {
            families: ConstraintFamilies {
                stochasticity_pause: pause,
                stochasticity_move: moving,
                nonnegativity: nonneg,
            },
            min_value,
            tolerance,
            points,
            wall_time_ms,
        }
    }

    /// Mean row-sum violation over both origins.
    pub fn mean_stochasticity_violation(&self) -> f64 {
        let p = &self.families.stochasticity_pause;
        let m = &self.families.stochasticity_move;
        let n = p.evaluated + m.evaluated;
        if n == 0 {
            0.0
        } else {
            (p.mean * p.evaluated as f64 + m.mean * m.evaluated as f64) / n as f64
        }
    }

    pub fn max_stochasticity_violation(&self) -> f64 {
        self.families
            .stochasticity_pause
            .max
            .max(self.families.stochasticity_move.max)
    }
}

/// Penalty `λ [(a_pp + a_pm - 1)^2 + (a_mm + a_mp - 1)^2 + Σ max(0, margin - a)^2]`
/// at one point and its gradient with respect to the four task values.
pub fn penalty_terms(mean: &[f64], weight: f64, margin: f64) -> (f64, [f64; 4]) {
    let rp = mean[TASK_PP] + mean[TASK_PM] - 1.0;
    let rm = mean[TASK_MM] + mean[TASK_MP] - 1.0;
    let mut value = rp * rp + rm * rm;
    let mut grad = [0.0; 4];
    grad[TASK_PP] = 2.0 * rp;
    grad[TASK_PM] = 2.0 * rp;
    grad[TASK_MM] = 2.0 * rm;
    grad[TASK_MP] = 2.0 * rm;
    for l in 0..4 {
        let h = (margin - mean[l]).max(0.0);
        value += h * h;
        grad[l] -= 2.0 * h;
    }
    (weight * value, grad.map(|g| weight * g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ConstraintRule {
    Uniform { count: i64 },
    TrainingBins,
    Custom { points: Vec<f64> },
}

impl std::str::FromStr for ConstraintRule {
    type Err = String;

    /// `bins`, `uniform:N`
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bins" | "training_bins" => Ok(ConstraintRule::TrainingBins),
            _ => match s.strip_prefix("uniform:") {
                Some(n) => n
                    .parse()
                    .map(|count| ConstraintRule::Uniform { count })
                    .map_err(|_| format!("bad point count in {s:?}")),
                None => Err(format!("unknown constraint rule {s:?}")),
            },
        }
    }
}

/// Sorted, distinct week-phase hours in `[0, 168)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintPointSet {
    pub rule: ConstraintRule,
    pub points: Vec<f64>,
}

impl ConstraintPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn build_constraint_points(scheme: TimeBinScheme, rule: ConstraintRule) -> Result<ConstraintPointSet> {
    let points = match &rule {
        ConstraintRule::Uniform { count } => {
            if *count <= 0 {
                return Err(Error::InvalidCount(format!("uniform constraint rule needs m > 0, got {count}")));
            }
            let step = WEEK_HOURS / *count as f64;
            (0..*count).map(|u| u as f64 * step).collect()
        }
        ConstraintRule::TrainingBins => scheme.bin_centers(),
        ConstraintRule::Custom { points } => {
            if points.is_empty() {
                return Err(Error::InvalidCount("custom constraint rule has no points".into()));
            }
            if let Some(p) = points.iter().find(|p| !(0.0..WEEK_HOURS).contains(*p)) {
                return Err(Error::InvalidConfig(format!("constraint point {p} outside [0, 168)")));
            }
            let mut v = points.clone();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        }
    };
    Ok(ConstraintPointSet { rule, points })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintConfig {
    /// Initial penalty weight λ.
    pub penalty_weight: f64,
    /// λ is multiplied by this at each restart.
    pub multiplier: f64,
    pub restarts: usize,
    pub nonneg_margin: f64,
    pub report_tolerance: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            penalty_weight: 10.0,
            multiplier: 10.0,
            restarts: 3,
            nonneg_margin: 0.0,
            report_tolerance: DEFAULT_REPORT_TOLERANCE,
        }
    }
}

impl ConstraintConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_weight > 0.0 && self.penalty_weight.is_finite()) {
            return Err(Error::InvalidConfig("penalty weight must be positive".into()));
        }
        if !(self.multiplier >= 1.0) {
            return Err(Error::InvalidConfig("penalty multiplier must be at least 1".into()));
        }
        if !(self.nonneg_margin >= 0.0) {
            return Err(Error::InvalidConfig("non-negativity margin must be >= 0".into()));
        }
        Ok(())
    }

    /// Weight used at each stage: `λ, λ·m, ..., λ·m^restarts`.
    pub fn schedule(&self) -> Vec<f64> {
        (0..=self.restarts)
            .map(|s| self.penalty_weight * self.multiplier.powi(s as i32))
            .collect()
    }
}

/// NLL plus the penalty at `cfg.penalty_weight`.
pub fn penalized_objective(
    hyper: &Hyperparameters,
    data: &TrainingSet,
    points: &ConstraintPointSet,
    cfg: &ConstraintConfig,
) -> Result<f64> {
    let spec = PenaltySpec {
        points: &points.points,
        weight: cfg.penalty_weight,
        margin: cfg.nonneg_margin,
    };
    Ok(evaluate(hyper, data, SolverKind::Structured, Some(&spec), false)?.objective)
}

/// Violation statistics of per-point task means `[a_pp, a_pm, a_mm, a_mp]`.
pub fn report_from_means(means: &[Vec<f64>], tolerance: f64, wall_time_ms: f64) -> ConstraintReport {
    let pause: Vec<f64> = means.iter().map(|m| (m[TASK_PP] + m[TASK_PM] - 1.0).abs()).collect();
    let moving: Vec<f64> = means.iter().map(|m| (m[TASK_MM] + m[TASK_MP] - 1.0).abs()).collect();
    let nonneg: Vec<f64> = means.iter().flatten().map(|&v| (-v).max(0.0)).collect();
    let min_value = means.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    ConstraintReport::new(
        ViolationStats::from_values(&pause, tolerance),
        ViolationStats::from_values(&moving, tolerance),
        ViolationStats::from_values(&nonneg, tolerance),
        if means.is_empty() { 0.0 } else { min_value },
        tolerance,
        means.len(),
        wall_time_ms,
    )
}

pub fn evaluate_constraints(model: &MultiTaskGP, points: &ConstraintPointSet) -> Result<ConstraintReport> {
    evaluate_constraints_with_tolerance(model, points, DEFAULT_REPORT_TOLERANCE)
}

pub fn evaluate_constraints_with_tolerance(
    model: &MultiTaskGP,
    points: &ConstraintPointSet,
    tolerance: f64,
) -> Result<ConstraintReport> {
    if model.hyper().tasks() != 4 {
        return Err(Error::InvalidConfig("constraint reports need the four transition tasks".into()));
    }
    let start = Instant::now();
    let means = model.predict_means(&points.points);
    Ok(report_from_means(&means, tolerance, start.elapsed().as_secs_f64() * 1e3))
}

#[derive(Debug)]
pub struct ConstrainedFit {
    pub model: MultiTaskGP,
    pub report: ConstraintReport,
    pub trajectory: Vec<TrajectoryPoint>,
    pub initial_nll: f64,
    pub final_nll: f64,
    pub final_objective: f64,
    pub wall_time_ms: f64,
}

/// Minimizes the penalized objective with the escalating λ schedule, each
/// stage warm-started from the previous one.
pub fn fit_constrained(
    data: &TrainingSet,
    points: &ConstraintPointSet,
    cfg: &ConstraintConfig,
    fit_config: &FitConfig,
) -> Result<ConstrainedFit> {
    cfg.validate()?;
    if data.tasks() != 4 {
        return Err(Error::InvalidConfig("constrained fitting needs the four transition tasks".into()));
    }
    let schedule = PenaltySchedule {
        points: &points.points,
        margin: cfg.nonneg_margin,
        weights: cfg.schedule(),
    };
    let out = fit_staged(data, fit_config, Some(&schedule))?;
    let report = evaluate_constraints_with_tolerance(&out.model, points, cfg.report_tolerance)?;
    Ok(ConstrainedFit {
        model: out.model,
        report,
        trajectory: out.trajectory,
        initial_nll: out.initial_nll,
        final_nll: out.final_nll,
        final_objective: out.final_objective,
        wall_time_ms: out.wall_time_ms,
    })
}
