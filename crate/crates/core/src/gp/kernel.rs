use serde::{Deserialize, Serialize};

use crate::markov::WEEK_HOURS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Rbf,
    Matern32,
}

impl std::str::FromStr for KernelFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rbf" => Ok(KernelFamily::Rbf),
            "matern32" => Ok(KernelFamily::Matern32),
            other => Err(format!("unknown kernel family {other:?}")),
        }
    }
}

/// Stationary kernel over time in hours.
///
/// With `periodic` set the correlation is summed over week-shifted images,
/// `c_p(dt) = Σ_k c(dt + 168 k) / Σ_k c(168 k)`, so that `k(0) = σ_f²`,
/// `k(dt) = k(dt + 168) = k(-dt)` and the kernel stays positive
/// semi-definite for every lengthscale. For lengthscales well below a week it
/// coincides with `c` evaluated at the cyclic distance `min(|dt|, 168 - |dt|)`;
/// that plain substitution is not positive semi-definite once the lengthscale
/// approaches a day or more.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub periodic: bool,
}

impl KernelSpec {
    pub fn rbf(lengthscale: f64, signal_variance: f64) -> Self {
        Self {
            family: KernelFamily::Rbf,
            lengthscale,
            signal_variance,
            periodic: true,
        }
    }

    pub fn matern32(lengthscale: f64, signal_variance: f64) -> Self {
        Self {
            family: KernelFamily::Matern32,
            lengthscale,
            signal_variance,
            periodic: true,
        }
    }

    pub fn non_periodic(mut self) -> Self {
        self.periodic = false;
        self
    }

    pub fn lag(&self, dt: f64) -> f64 {
        let a = dt.abs();
        if self.periodic {
            let a = a.rem_euclid(WEEK_HOURS);
            a.min(WEEK_HOURS - a)
        } else {
            a
        }
    }

    /// Unit-variance correlation at lag `r >= 0`.
    pub fn correlation(&self, r: f64) -> f64 {
        self.correlation_and_dlog_lengthscale(r).0
    }

    /// Correlation at lag `r` and its derivative with respect to
    /// `log(lengthscale)`.
    pub fn correlation_and_dlog_lengthscale(&self, r: f64) -> (f64, f64) {
        let ell = self.lengthscale;
        match self.family {
            KernelFamily::Rbf => {
                let z = r * r / (ell * ell);
                let c = (-0.5 * z).exp();
                (c, c * z)
            }
            KernelFamily::Matern32 => {
                let u = 3f64.sqrt() * r / ell;
                let e = (-u).exp();
                ((1.0 + u) * e, u * u * e)
            }
        }
    }

    /// Images needed on each side before the tail drops below 1e-17.
    fn image_count(&self) -> i64 {
        let reach = match self.family {
            KernelFamily::Rbf => 9.0,
            KernelFamily::Matern32 => 24.0,
        };
        (reach * self.lengthscale / WEEK_HOURS).ceil() as i64 + 1
    }

    fn image_sum(&self, x: f64, images: i64) -> (f64, f64) {
        let mut s = 0.0;
        let mut ds = 0.0;
        for k in -images..=images {
            let (c, dc) = self.correlation_and_dlog_lengthscale((x + k as f64 * WEEK_HOURS).abs());
            s += c;
            ds += dc;
        }
        (s, ds)
    }

    /// Correlation at time difference `dt` (periodic or not) and its
    /// derivative with respect to `log(lengthscale)`.
    pub fn correlation_at(&self, dt: f64) -> (f64, f64) {
        let x = self.folded_distance(dt);
        if !self.periodic {
            return self.correlation_and_dlog_lengthscale(x);
        }
        let images = self.image_count();
        let (s, ds) = self.image_sum(x, images);
        let (s0, ds0) = self.image_sum(0.0, images);
        (s / s0, ds / s0 - s * ds0 / (s0 * s0))
    }

    /// Distance the kernel actually depends on: `|dt|`, folded onto
    /// `[0, 84]` hours when periodic.
    pub fn folded_distance(&self, dt: f64) -> f64 {
        if !self.periodic {
            return dt.abs();
        }
        let x = dt.abs().rem_euclid(WEEK_HOURS);
        x.min(WEEK_HOURS - x)
    }

    pub fn eval(&self, dt: f64) -> f64 {
        self.signal_variance * self.correlation_at(dt).0
    }

    /// `(k, dk/dlog(lengthscale))` at time difference `dt`.
    pub fn eval_with_grad(&self, dt: f64) -> (f64, f64) {
        let (c, dc) = self.correlation_at(dt);
        (self.signal_variance * c, self.signal_variance * dc)
    }
}

pub fn kernel_eval(spec: &KernelSpec, dt: f64) -> f64 {
    spec.eval(dt)
}
