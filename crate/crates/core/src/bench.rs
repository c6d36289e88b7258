//! Timing harness comparing structured and dense covariance algebra.
//!
//! The dense matvec baseline sums the Toeplitz entries directly (`O(n^2)`
//! work, no `n x n` storage) so that it can run at sizes where a stored
//! dense matrix would not fit in memory.

use std::hint::black_box;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{evaluate, Hyperparameters, KernelFamily, SolverKind, TrainingSet};
use crate::linalg::{
    cg_solve, kron_matvec, JitteredCholesky, KroneckerOperator, StructuredOperator, ToeplitzMatrix,
    ToeplitzOperator,
};
use crate::markov::{TimeBinScheme, TASK_NAMES};

pub const CSV_HEADER: [&str; 5] = ["operation", "structure", "n", "median_ms", "speedup_vs_dense"];
pub const MIN_SIZE: usize = 64;
pub const MIN_REPETITIONS: usize = 5;
/// Largest size at which the dense Cholesky and Kronecker baselines run.
pub const DENSE_FACTOR_LIMIT: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub operation: String,
    pub structure: String,
    pub n: usize,
    pub median_ms: f64,
    pub speedup_vs_dense: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    /// Also time the solve, Kronecker and GP-likelihood comparisons.
    pub extended: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1024, 2048, 4096, 8192, 16384],
            repetitions: MIN_REPETITIONS,
            seed: 0,
            extended: true,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::InvalidConfig("no benchmark sizes given".into()));
        }
        if let Some(n) = self.sizes.iter().find(|&&n| n < MIN_SIZE) {
            return Err(Error::InvalidConfig(format!("benchmark size {n} is below {MIN_SIZE}")));
        }
        if self.repetitions < MIN_REPETITIONS {
            return Err(Error::InvalidConfig(format!(
                "at least {MIN_REPETITIONS} repetitions are required"
            )));
        }
        Ok(())
    }
}

/// Median wall time of one call in milliseconds. Each repetition runs enough
/// calls to last about two milliseconds so short operations are resolvable.
pub fn median_ms(repetitions: usize, mut f: impl FnMut()) -> f64 {
    let t0 = Instant::now();
    f();
    let once = t0.elapsed().as_secs_f64();
    let inner = ((2e-3 / once.max(1e-9)).ceil() as usize).clamp(1, 100_000);
    let mut samples: Vec<f64> = (0..repetitions)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..inner {
                f();
            }
            t.elapsed().as_secs_f64() * 1e3 / inner as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let k = samples.len();
    if k % 2 == 1 {
        samples[k / 2]
    } else {
        0.5 * (samples[k / 2 - 1] + samples[k / 2])
    }
}

fn bench_kernel_column(n: usize) -> Vec<f64> {
    // RBF with a 4-step lengthscale on a unit grid
    (0..n).map(|i| (-0.5 * (i as f64 / 4.0).powi(2)).exp()).collect()
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().map(|v| v.abs()).fold(f64::MIN_POSITIVE, f64::max);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn pair(operation: &str, structure: &str, n: usize, dense_ms: f64, structured_ms: f64) -> [BenchRow; 2] {
    [
        BenchRow {
            operation: operation.into(),
            structure: "dense".into(),
            n,
            median_ms: dense_ms,
            speedup_vs_dense: 1.0,
        },
        BenchRow {
            operation: operation.into(),
            structure: structure.into(),
            n,
            median_ms: structured_ms,
            speedup_vs_dense: dense_ms / structured_ms,
        },
    ]
}

/// Toeplitz matvec: direct summation against the circulant-embedding FFT.
/// Fails if the two products disagree beyond `1e-10` relative.
pub fn bench_matvec(n: usize, repetitions: usize, rng: &mut ChaCha8Rng) -> Result<[BenchRow; 2]> {
    let t = ToeplitzMatrix::new(bench_kernel_column(n))?;
    let op = ToeplitzOperator::new(t.clone());
    let v = random_vector(rng, n);
    let dense_out = t.direct_matvec(&v)?;
    let fast_out = op.matvec(&v)?;
    let err = max_rel_diff(&fast_out, &dense_out);
    if err > 1e-10 {
        return Err(Error::InvalidConfig(format!("matvec mismatch {err:e} at n={n}")));
    }
    let dense = median_ms(repetitions, || {
        black_box(t.direct_matvec(black_box(&v)).unwrap());
    });
    let fast = median_ms(repetitions, || {
        black_box(op.matvec(black_box(&v)).unwrap());
    });
    Ok(pair("matvec", "toeplitz", n, dense, fast))
}

/// `(T + 0.1 I) x = b`: dense Cholesky against FFT-based CG.
pub fn bench_solve(n: usize, repetitions: usize, rng: &mut ChaCha8Rng) -> Result<[BenchRow; 2]> {
    let mut col = bench_kernel_column(n);
    col[0] += 0.1;
    let t = ToeplitzMatrix::new(col)?;
    let dense_m = t.to_dense();
    let op = StructuredOperator::toeplitz(t);
    let b = random_vector(rng, n);
    let x_dense = JitteredCholesky::new(&dense_m, 0.0)?.solve(&b);
    let x_cg = cg_solve(&op, &b, 1e-10, 10 * n)?.solution;
    let err = max_rel_diff(&x_cg, &x_dense);
    if err > 1e-6 {
        return Err(Error::InvalidConfig(format!("solve mismatch {err:e} at n={n}")));
    }
    let dense = median_ms(repetitions, || {
        black_box(JitteredCholesky::new(&dense_m, 0.0).unwrap().solve(&b));
    });
    let fast = median_ms(repetitions, || {
        black_box(cg_solve(&op, &b, 1e-10, 10 * n).unwrap());
    });
    Ok(pair("solve", "toeplitz_cg", n, dense, fast))
}

/// Two-factor Kronecker matvec against the expanded matrix.
pub fn bench_kron(n: usize, repetitions: usize, rng: &mut ChaCha8Rng) -> Result<[BenchRow; 2]> {
    let a = n.trailing_zeros() / 2;
    let (p, q) = (1usize << a, n >> a);
    if p * q != n {
        return Err(Error::InvalidConfig(format!("Kronecker benchmark needs a power of two, got {n}")));
    }
    let op = KroneckerOperator::new(vec![
        StructuredOperator::toeplitz(ToeplitzMatrix::new(bench_kernel_column(p))?),
        StructuredOperator::toeplitz(ToeplitzMatrix::new(bench_kernel_column(q))?),
    ])?;
    let dense_m = op.to_dense()?;
    let v = random_vector(rng, n);
    let fast_out = kron_matvec(&op, &v)?;
    let dense_out: Vec<f64> = (&dense_m * nalgebra::DVector::from_column_slice(&v)).as_slice().to_vec();
    let err = max_rel_diff(&fast_out, &dense_out);
    if err > 1e-10 {
        return Err(Error::InvalidConfig(format!("Kronecker mismatch {err:e} at n={n}")));
    }
    let vv = nalgebra::DVector::from_column_slice(&v);
    let dense = median_ms(repetitions, || {
        black_box(&dense_m * black_box(&vv));
    });
    let fast = median_ms(repetitions, || {
        black_box(kron_matvec(&op, black_box(&v)).unwrap());
    });
    Ok(pair("kron_matvec", "kronecker", n, dense, fast))
}

/// Four-task likelihood and gradient on a complete hourly grid:
/// dense Cholesky path against the spectral path.
pub fn bench_gp(repetitions: usize, rng: &mut ChaCha8Rng) -> Result<[BenchRow; 2]> {
    let scheme = TimeBinScheme::hourly();
    let x = scheme.bin_centers();
    let targets: Vec<Vec<f64>> = x.iter().map(|_| (0..4).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let data = TrainingSet::complete(TASK_NAMES.iter().map(|s| s.to_string()).collect(), x, targets)?
        .with_scheme(scheme)?;
    let h = Hyperparameters::initial(KernelFamily::Rbf, data.pooled_variance(), data.task_means(), true);
    let d = evaluate(&h, &data, SolverKind::Dense, None, true)?;
    let s = evaluate(&h, &data, SolverKind::Structured, None, true)?;
    if (d.nll - s.nll).abs() > 1e-6 * d.nll.abs().max(1.0) {
        return Err(Error::InvalidConfig("likelihood mismatch between solvers".into()));
    }
    let n = 4 * data.len();
    let dense = median_ms(repetitions, || {
        black_box(evaluate(&h, &data, SolverKind::Dense, None, true).unwrap());
    });
    let fast = median_ms(repetitions, || {
        black_box(evaluate(&h, &data, SolverKind::Structured, None, true).unwrap());
    });
    Ok(pair("gp_nll_grad", "spectral", n, dense, fast))
}

pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::new();
    for &n in &config.sizes {
        rows.extend(bench_matvec(n, config.repetitions, &mut rng)?);
    }
    if config.extended {
        for &n in config.sizes.iter().filter(|&&n| n <= DENSE_FACTOR_LIMIT) {
            rows.extend(bench_solve(n, config.repetitions, &mut rng)?);
            if n.is_power_of_two() {
                rows.extend(bench_kron(n, config.repetitions, &mut rng)?);
            }
        }
        rows.extend(bench_gp(config.repetitions, &mut rng)?);
    }
    Ok(rows)
}

/// `time(2n) / time(n)` for each consecutive doubling present in `rows`.
pub fn scaling_ratios(rows: &[BenchRow], operation: &str, structure: &str) -> Vec<(usize, f64)> {
    let mut pts: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| r.operation == operation && r.structure == structure)
        .map(|r| (r.n, r.median_ms))
        .collect();
    pts.sort_by_key(|p| p.0);
    pts.windows(2)
        .filter(|w| w[1].0 == 2 * w[0].0)
        .map(|w| (w[0].0, w[1].1 / w[0].1))
        .collect()
}

/// Growth factor per doubling of `n`, `2^slope` of the least-squares fit of
/// `log time` against `log n` over every size present in `rows`.
pub fn fitted_scaling_ratio(rows: &[BenchRow], operation: &str, structure: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.operation == operation && r.structure == structure && r.median_ms > 0.0)
        .map(|r| ((r.n as f64).log2(), r.median_ms.log2()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(2f64.powf(sxy / sxx))
}

pub fn write_bench_csv(rows: &[BenchRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.operation.clone(),
            r.structure.clone(),
            r.n.to_string(),
            format!("{:.6}", r.median_ms),
            format!("{:.4}", r.speedup_vs_dense),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bench_file(rows: &[BenchRow], path: &Path) -> Result<()> {
    write_bench_csv(rows, std::fs::File::create(path)?)
}
