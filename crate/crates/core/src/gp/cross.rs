//! Cross-covariance `K(points, inputs)` between penalty points and training
//! inputs, with products against `n x t` task blocks.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::kernel::KernelSpec;
use crate::markov::WEEK_HOURS;

/// Distances (or grid offsets) closer than this many hours share one value.
const KEY_SCALE: f64 = 1e9;

/// Rows whose points sit at the same fractional offset on the input grid.
pub(crate) struct Group {
    /// `(row, grid index)`
    rows: Vec<(usize, usize)>,
    k_hat: Vec<Complex64>,
    dk_hat: Vec<Complex64>,
}

pub(crate) enum CrossCovariance {
    Dense {
        k: DMatrix<f64>,
        dk: DMatrix<f64>,
    },
    /// Periodic kernel on a complete regular grid: row `u` of group `g` is
    /// the table of `g` rotated to grid index `j_u`.
    Rotated {
        q: usize,
        groups: Vec<Group>,
        fft: Arc<dyn Fft<f64>>,
        ifft: Arc<dyn Fft<f64>>,
    },
}

fn on_regular_week_grid(kernel: &KernelSpec, inputs: &[f64]) -> bool {
    let n = inputs.len();
    let w = WEEK_HOURS / n.max(1) as f64;
    kernel.periodic
        && n > 0
        && inputs
            .iter()
            .enumerate()
            .all(|(i, x)| (x - inputs[0] - i as f64 * w).abs() <= 1e-9 * WEEK_HOURS)
}

impl CrossCovariance {
    pub fn build(kernel: &KernelSpec, points: &[f64], inputs: &[f64]) -> Self {
        let (q, n) = (points.len(), inputs.len());
        if on_regular_week_grid(kernel, inputs) {
            let w = WEEK_HOURS / n as f64;
            let mut offsets: Vec<(usize, usize, f64)> = Vec::with_capacity(q);
            for (u, p) in points.iter().enumerate() {
                let t = (p - inputs[0]) / w;
                let mut j = t.floor();
                let mut f = t - j;
                if f > 1.0 - 1e-12 {
                    j += 1.0;
                    f = 0.0;
                }
                offsets.push((u, (j as i64).rem_euclid(n as i64) as usize, f));
            }
            let mut by_offset: HashMap<i64, usize> = HashMap::new();
            let mut tables: Vec<(f64, Vec<(usize, usize)>)> = Vec::new();
            for &(u, j, f) in &offsets {
                let g = *by_offset.entry((f * KEY_SCALE).round() as i64).or_insert_with(|| {
                    tables.push((f, Vec::new()));
                    tables.len() - 1
                });
                tables[g].1.push((u, j));
            }
            // each group costs a few FFTs; with many groups the dense form wins
            if tables.len() * 16 <= q.max(16) {
                let mut planner = FftPlanner::new();
                let fft = planner.plan_fft_forward(n);
                let ifft = planner.plan_fft_inverse(n);
                let groups = tables
                    .into_iter()
                    .map(|(f, rows)| {
                        let vals: Vec<(f64, f64)> = (0..n).map(|d| kernel.eval_with_grad((d as f64 + f) * w)).collect();
                        let mut k_hat: Vec<Complex64> = vals.iter().map(|v| Complex64::new(v.0, 0.0)).collect();
                        let mut dk_hat: Vec<Complex64> = vals.iter().map(|v| Complex64::new(v.1, 0.0)).collect();
                        fft.process(&mut k_hat);
                        fft.process(&mut dk_hat);
                        Group { rows, k_hat, dk_hat }
                    })
                    .collect();
                return CrossCovariance::Rotated { q, groups, fft, ifft };
            }
        }
        let mut k = DMatrix::zeros(q, n);
        let mut dk = DMatrix::zeros(q, n);
        let mut seen: HashMap<i64, (f64, f64)> = HashMap::new();
        for (u, p) in points.iter().enumerate() {
            for (i, x) in inputs.iter().enumerate() {
                let d = kernel.folded_distance(p - x);
                let v = *seen
                    .entry((d * KEY_SCALE).round() as i64)
                    .or_insert_with(|| kernel.eval_with_grad(d));
                k[(u, i)] = v.0;
                dk[(u, i)] = v.1;
            }
        }
        CrossCovariance::Dense { k, dk }
    }

    /// `K a` for `a` of shape `n x t`.
    pub fn mul(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply(a, false)
    }

    /// `(dK/dlog l) a`.
    pub fn mul_grad(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply(a, true)
    }

    fn apply(&self, a: &DMatrix<f64>, grad: bool) -> DMatrix<f64> {
        match self {
            CrossCovariance::Dense { k, dk } => (if grad { dk } else { k }) * a,
            CrossCovariance::Rotated { q, groups, fft, ifft } => {
                let n = a.nrows();
                let mut out = DMatrix::zeros(*q, a.ncols());
                for c in 0..a.ncols() {
                    let mut a_hat: Vec<Complex64> = a.column(c).iter().map(|&v| Complex64::new(v, 0.0)).collect();
                    fft.process(&mut a_hat);
                    for g in groups {
                        let table = if grad { &g.dk_hat } else { &g.k_hat };
                        // y[j] = Σ_i T[(j - i) mod n] a[i]
                        let mut y: Vec<Complex64> = table.iter().zip(&a_hat).map(|(t, x)| t * x).collect();
                        ifft.process(&mut y);
                        for &(u, j) in &g.rows {
                            out[(u, c)] = y[j].re / n as f64;
                        }
                    }
                }
                out
            }
        }
    }

    /// `K^T h` for `h` of shape `q x t`; `n` is the number of inputs.
    pub fn tr_mul(&self, h: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
        match self {
            CrossCovariance::Dense { k, .. } => k.tr_mul(h),
            CrossCovariance::Rotated { groups, fft, ifft, .. } => {
                let mut out = DMatrix::zeros(n, h.ncols());
                for c in 0..h.ncols() {
                    let mut acc = vec![Complex64::new(0.0, 0.0); n];
                    for g in groups {
                        // z[i] = Σ_j T[(j - i) mod n] H[j], H the rows scattered by grid index
                        let mut hs = vec![Complex64::new(0.0, 0.0); n];
                        for &(u, j) in &g.rows {
                            hs[j].re += h[(u, c)];
                        }
                        fft.process(&mut hs);
                        for ((s, t), x) in acc.iter_mut().zip(&g.k_hat).zip(&hs) {
                            *s += t.conj() * x;
                        }
                    }
                    ifft.process(&mut acc);
                    for i in 0..n {
                        out[(i, c)] = acc[i].re / n as f64;
                    }
                }
                out
            }
        }
    }

    #[cfg(test)]
    fn is_rotated(&self) -> bool {
        matches!(self, CrossCovariance::Rotated { .. })
    }
}
