//! Negative log marginal likelihood, the optional soft-constraint penalty on
//! the posterior mean, and their gradient in the unconstrained coordinates.

use nalgebra::DMatrix;

use super::data::TrainingSet;
use super::hyper::{Hyperparameters, NoiseModel, ParamSlot, NOISE_FLOOR};
use super::cross::CrossCovariance;
use super::system::{CovarianceSystem, Factorization, SolverKind};
use crate::constraints::penalty_terms;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Quadratic penalty on the posterior mean at `points` (hours).
#[derive(Clone, Copy, Debug)]
pub struct PenaltySpec<'a> {
    pub points: &'a [f64],
    pub weight: f64,
    pub margin: f64,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    /// `nll + penalty`
    pub objective: f64,
    pub nll: f64,
    pub penalty: f64,
    /// Gradient of `objective` in [`Hyperparameters::slots`] order.
    pub gradient: Option<Vec<f64>>,
    pub jitter: f64,
    pub solver: SolverKind,
}

/// NLL using the structured path when the data allow it.
pub fn nll(hyper: &Hyperparameters, data: &TrainingSet) -> Result<f64> {
    Ok(evaluate(hyper, data, SolverKind::Structured, None, false)?.nll)
}

pub fn nll_grad(hyper: &Hyperparameters, data: &TrainingSet) -> Result<(f64, Vec<f64>)> {
    let e = evaluate(hyper, data, SolverKind::Structured, None, true)?;
    Ok((e.nll, e.gradient.unwrap_or_default()))
}

/// Derivatives with respect to the natural parameters: the entries of
/// `K^f` treated as independent, `log ℓ`, and each task's noise variance.
struct NaturalGrad {
    kf: DMatrix<f64>,
    log_lengthscale: f64,
    noise: Vec<f64>,
}

pub fn evaluate(
    hyper: &Hyperparameters,
    data: &TrainingSet,
    solver: SolverKind,
    penalty: Option<&PenaltySpec>,
    want_grad: bool,
) -> Result<Evaluation> {
    let sys = CovarianceSystem::build(hyper, data, solver)?;
    let t = hyper.tasks();
    let n = data.len();
    let m = sys.obs.len();
    let resid: Vec<f64> = sys.obs.iter().map(|o| o.value - hyper.mean[o.task]).collect();
    let alpha = sys.solve(&resid);
    let quad: f64 = resid.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let nll = 0.5 * (quad + sys.log_det() + m as f64 * LN_2PI);
    if !nll.is_finite() {
        return Err(Error::NotPositiveDefinite { jitter: sys.jitter() });
    }

    let mut grad = NaturalGrad {
        kf: DMatrix::zeros(t, t),
        log_lengthscale: 0.0,
        noise: vec![0.0; t],
    };
    // alpha scattered onto the (point, task) grid
    let mut alpha_grid = DMatrix::zeros(n, t);
    for (o, a) in sys.obs.iter().zip(&alpha) {
        alpha_grid[(o.point, o.task)] = *a;
    }

    let mut penalty_value = 0.0;
    let mut v = vec![0.0; m];
    if let Some(p) = penalty {
        if t != 4 {
            return Err(Error::InvalidConfig("the constraint penalty needs the four transition tasks".into()));
        }
        let q = p.points.len();
        let kc = CrossCovariance::build(&hyper.kernel, p.points, &data.inputs);
        let r = kc.mul(&alpha_grid);
        let rk = &r * &sys.kf;
        let mut g = DMatrix::zeros(q, t);
        for u in 0..q {
            let mu: Vec<f64> = (0..t).map(|l| hyper.mean[l] + rk[(u, l)]).collect();
            let (val, dmu) = penalty_terms(&mu, p.weight, p.margin);
            penalty_value += val;
            for l in 0..t {
                g[(u, l)] = dmu[l];
            }
        }
        if want_grad {
            grad.kf += g.transpose() * &r;
            let drk = kc.mul_grad(&alpha_grid) * &sys.kf;
            grad.log_lengthscale += g.component_mul(&drk).sum();
            let h = kc.tr_mul(&(&g * &sys.kf), n);
            for (vp, o) in v.iter_mut().zip(&sys.obs) {
                *vp = h[(o.point, o.task)];
            }
            v = sys.solve(&v);
        }
    }

    let gradient = if want_grad {
        // u = alpha / 2 + Σ^{-1} K_x^T g
        let u: Vec<f64> = alpha.iter().zip(&v).map(|(a, b)| 0.5 * a + b).collect();
        match &sys.fact {
            Factorization::Dense(d) => dense_terms(&sys, d, &alpha, &u, &mut grad),
            Factorization::Spectral(s) => spectral_terms(&sys, s, n, &alpha, &u, &mut grad),
        }
        Some(chain_to_unconstrained(hyper, &sys.kf, &grad))
    } else {
        None
    };

    Ok(Evaluation {
        objective: nll + penalty_value,
        nll,
        penalty: penalty_value,
        gradient,
        jitter: sys.jitter(),
        solver: sys.kind(),
    })
}

/// Contracts `W = Σ^{-1}/2 - (u α^T + α u^T)/2` against every `∂Σ`.
fn dense_terms(
    sys: &CovarianceSystem,
    d: &super::system::DenseSystem,
    alpha: &[f64],
    u: &[f64],
    grad: &mut NaturalGrad,
) {
    let inv = d.chol.factor.inverse();
    let obs = &sys.obs;
    for p in 0..obs.len() {
        let (lp, ip) = (obs[p].task, obs[p].point);
        for q in 0..=p {
            let (lq, iq) = (obs[q].task, obs[q].point);
            let w = 0.5 * inv[(p, q)] - 0.5 * (u[p] * alpha[q] + alpha[p] * u[q]);
            let w = if p == q { w } else { 2.0 * w };
            let k = d.ktime[(ip, iq)];
            let dk = d.dktime[(ip, iq)];
            if p == q {
                grad.kf[(lp, lq)] += w * k;
                grad.noise[lp] += w;
            } else {
                // split across (lp,lq) and (lq,lp) so G stays symmetric
                grad.kf[(lp, lq)] += 0.5 * w * k;
                grad.kf[(lq, lp)] += 0.5 * w * k;
            }
            grad.log_lengthscale += w * sys.kf[(lp, lq)] * dk;
        }
    }
}

fn spectral_terms(
    sys: &CovarianceSystem,
    s: &super::system::SpectralSystem,
    n: usize,
    alpha: &[f64],
    u: &[f64],
    grad: &mut NaturalGrad,
) {
    let t = sys.kf.nrows();
    // trace part: ½ tr(Σ^{-1} ∂Σ) evaluated block by block
    for j in 0..s.n {
        let inv = &s.block_inverse[j];
        grad.kf += inv * (0.5 * s.lambda[j]);
        grad.log_lengthscale += 0.5 * s.dlambda[j] * inv.component_mul(&sys.kf).sum();
        for l in 0..t {
            grad.noise[l] += 0.5 * inv[(l, l)];
        }
    }
    // bilinear part: -u^T ∂Σ α
    let c_alpha: Vec<Vec<f64>> = (0..t)
        .map(|l| s.circulant_apply(&s.lambda, &alpha[l * n..(l + 1) * n]))
        .collect();
    let dc_alpha: Vec<Vec<f64>> = (0..t)
        .map(|l| s.circulant_apply(&s.dlambda, &alpha[l * n..(l + 1) * n]))
        .collect();
    for l in 0..t {
        let ul = &u[l * n..(l + 1) * n];
        for l2 in 0..t {
            let p: f64 = ul.iter().zip(&c_alpha[l2]).map(|(a, b)| a * b).sum();
            let pd: f64 = ul.iter().zip(&dc_alpha[l2]).map(|(a, b)| a * b).sum();
            grad.kf[(l, l2)] -= p;
            grad.log_lengthscale -= sys.kf[(l, l2)] * pd;
        }
        let ua: f64 = ul.iter().zip(&alpha[l * n..(l + 1) * n]).map(|(a, b)| a * b).sum();
        grad.noise[l] -= ua;
    }
}

fn chain_to_unconstrained(hyper: &Hyperparameters, kf: &DMatrix<f64>, grad: &NaturalGrad) -> Vec<f64> {
    let l = hyper.task.factor();
    // K^f scales with σ_f² only through the kernel, so d/dlog σ_f² = Σ G ∘ K^f
    let d_log_sf = grad.kf.component_mul(kf).sum();
    let g_sym = &grad.kf + grad.kf.transpose();
    let g_l = &g_sym * l;
    let noise_scale = |raw: f64| if raw >= NOISE_FLOOR { raw } else { 0.0 };
    hyper
        .slots()
        .into_iter()
        .map(|slot| match slot {
            ParamSlot::LogLengthscale => grad.log_lengthscale,
            ParamSlot::LogSignalVariance => d_log_sf,
            ParamSlot::LogTaskDiagonal(r) => g_l[(r, r)] * l[(r, r)],
            ParamSlot::TaskOffDiagonal(r, c) => g_l[(r, c)],
            ParamSlot::LogNoise(None) => match &hyper.noise {
                NoiseModel::Shared(v) => grad.noise.iter().sum::<f64>() * noise_scale(*v),
                NoiseModel::PerTask(_) => 0.0,
            },
            ParamSlot::LogNoise(Some(i)) => match &hyper.noise {
                NoiseModel::PerTask(vs) => grad.noise[i] * noise_scale(vs[i]),
                NoiseModel::Shared(_) => 0.0,
            },
        })
        .collect()
}
