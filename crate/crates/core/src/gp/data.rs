use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::markov::{TimeBinScheme, TransitionDataset, TASK_NAMES};

/// One observed target: task `task` at input index `point`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub task: usize,
    pub point: usize,
    pub value: f64,
}

/// Inputs (hours), an `N x T` target table and its validity mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub task_names: Vec<String>,
    pub inputs: Vec<f64>,
    /// `targets[i][l]`; masked entries hold `0.0` and are ignored.
    pub targets: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    /// Weekly scheme whose bin centers are the inputs, when they are.
    pub scheme: Option<TimeBinScheme>,
}

impl TrainingSet {
    pub fn new(
        task_names: Vec<String>,
        inputs: Vec<f64>,
        targets: Vec<Vec<f64>>,
        mask: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let t = task_names.len();
        let n = inputs.len();
        if t == 0 {
            return Err(Error::InvalidConfig("at least one task is required".into()));
        }
        if targets.len() != n || mask.len() != n {
            return Err(Error::DimensionError {
                expected: n,
                got: targets.len().min(mask.len()),
            });
        }
        if targets.iter().any(|r| r.len() != t) || mask.iter().any(|r| r.len() != t) {
            return Err(Error::InvalidConfig(format!("every target row needs {t} entries")));
        }
        if inputs.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidConfig("inputs must be sorted ascending".into()));
        }
        if targets
            .iter()
            .zip(&mask)
            .any(|(r, m)| r.iter().zip(m).any(|(v, &ok)| ok && !v.is_finite()))
        {
            return Err(Error::InvalidConfig("observed targets must be finite".into()));
        }
        Ok(Self {
            task_names,
            inputs,
            targets,
            mask,
            scheme: None,
        })
    }

    /// Complete single-task or multi-task data without missing entries.
    pub fn complete(task_names: Vec<String>, inputs: Vec<f64>, targets: Vec<Vec<f64>>) -> Result<Self> {
        let mask = targets.iter().map(|r| vec![true; r.len()]).collect();
        Self::new(task_names, inputs, targets, mask)
    }

    /// Four-task training set at the bin centers of `ds`; missing origins are
    /// masked.
    pub fn from_dataset(ds: &TransitionDataset) -> Self {
        let scheme = ds.scheme();
        let inputs = scheme.bin_centers();
        let mut targets = Vec::with_capacity(inputs.len());
        let mut mask = Vec::with_capacity(inputs.len());
        for row in ds.rows() {
            let vals = row.values();
            targets.push(vals.iter().map(|v| v.unwrap_or(0.0)).collect());
            mask.push(vals.iter().map(Option::is_some).collect());
        }
        Self {
            task_names: TASK_NAMES.iter().map(|s| s.to_string()).collect(),
            inputs,
            targets,
            mask,
            scheme: Some(scheme),
        }
    }

    pub fn with_scheme(mut self, scheme: TimeBinScheme) -> Result<Self> {
        let centers = scheme.bin_centers();
        if centers.len() != self.inputs.len()
            || centers.iter().zip(&self.inputs).any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::InvalidConfig("inputs are not the bin centers of the scheme".into()));
        }
        self.scheme = Some(scheme);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn tasks(&self) -> usize {
        self.task_names.len()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|r| r.iter().all(|&m| m))
    }

    /// Observed entries in task-major order (all of task 0, then task 1, ...),
    /// matching the `K^f ⊗ K` layout.
    pub fn observations(&self) -> Vec<Observation> {
        let mut out = Vec::new();
        for task in 0..self.tasks() {
            for point in 0..self.len() {
                if self.mask[point][task] {
                    out.push(Observation {
                        task,
                        point,
                        value: self.targets[point][task],
                    });
                }
            }
        }
        out
    }

    pub fn observed_count(&self, task: usize) -> usize {
        self.mask.iter().filter(|m| m[task]).count()
    }

    /// Per-task average of the observed targets (0 for tasks with none).
    pub fn task_means(&self) -> Vec<f64> {
        (0..self.tasks())
            .map(|l| {
                let (s, n) = self
                    .targets
                    .iter()
                    .zip(&self.mask)
                    .filter(|(_, m)| m[l])
                    .fold((0.0, 0usize), |(s, n), (r, _)| (s + r[l], n + 1));
                if n == 0 {
                    0.0
                } else {
                    s / n as f64
                }
            })
            .collect()
    }

    /// Variance of observed targets around their task means, pooled.
    pub fn pooled_variance(&self) -> f64 {
        let means = self.task_means();
        let obs = self.observations();
        if obs.is_empty() {
            return 0.0;
        }
        obs.iter().map(|o| (o.value - means[o.task]).powi(2)).sum::<f64>() / obs.len() as f64
    }

    /// Hex SHA-256 over inputs, targets and mask.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.task_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for (i, x) in self.inputs.iter().enumerate() {
            h.update(x.to_le_bytes());
            for l in 0..self.tasks() {
                h.update([self.mask[i][l] as u8]);
                h.update(self.targets[i][l].to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
