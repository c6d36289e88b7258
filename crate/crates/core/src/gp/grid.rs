use serde::{Deserialize, Serialize};

use super::kernel::KernelSpec;
use crate::error::Result;
use crate::linalg::{toeplitz_from_kernel, KroneckerOperator, StructuredOperator, ToeplitzMatrix};
use crate::markov::{TimeBinScheme, WEEK_HOURS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridLayout {
    /// One axis of `168 b` bins.
    Flat1d,
    /// 7 days by `24 b` within-day slots, covariance `K_day ⊗ K_hour`.
    DayHourGrid,
}

/// Day-axis factor: unit-variance correlation between days `d` apart,
/// evaluated at `24 d` hours (cyclic on the week when the kernel is).
pub fn day_kernel(kernel: &KernelSpec, days: f64) -> f64 {
    kernel.correlation_at(24.0 * days).0
}

/// Hour-axis factor: the kernel within a day, never wrapped.
pub fn hour_kernel(kernel: &KernelSpec, hours: f64) -> f64 {
    kernel.non_periodic().eval(hours)
}

/// Covariance of the weekly grid of `scheme` as a structured operator.
///
/// `Flat1d` is Toeplitz in both kernel modes; with a periodic kernel it is
/// in fact circulant.
pub fn build_grid_covariance(kernel: &KernelSpec, scheme: TimeBinScheme, layout: GridLayout) -> Result<StructuredOperator> {
    match layout {
        GridLayout::Flat1d => {
            let t = toeplitz_from_kernel(|dt| kernel.eval(dt), &scheme.bin_centers())?;
            Ok(StructuredOperator::toeplitz(t))
        }
        GridLayout::DayHourGrid => {
            let slots = 24 * scheme.bins_per_hour() as usize;
            let width = scheme.bin_width_hours();
            let days = (WEEK_HOURS / 24.0) as usize;
            let day = ToeplitzMatrix::new((0..days).map(|d| day_kernel(kernel, d as f64)).collect())?;
            let hour = ToeplitzMatrix::new((0..slots).map(|h| hour_kernel(kernel, h as f64 * width)).collect())?;
            Ok(StructuredOperator::Kronecker(KroneckerOperator::new(vec![
                StructuredOperator::toeplitz(day),
                StructuredOperator::toeplitz(hour),
            ])?))
        }
    }
}
