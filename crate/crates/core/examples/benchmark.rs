// Structured against dense covariance algebra timings at small sizes.
// `mobgp bench` runs the full size range.

use mobgp::bench::{fitted_scaling_ratio, run_bench, BenchConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = BenchConfig {
        sizes: vec![256, 512, 1024],
        repetitions: 5,
        seed: 1,
        extended: false,
    };
    let rows = run_bench(&cfg)?;
    for r in &rows {
        println!("{:<8} {:<9} n={:<5} {:>9.4} ms  x{:.1}", r.operation, r.structure, r.n, r.median_ms, r.speedup_vs_dense);
    }
    if let (Some(d), Some(s)) = (fitted_scaling_ratio(&rows, "matvec", "dense"), fitted_scaling_ratio(&rows, "matvec", "toeplitz")) {
        println!("time(2n)/time(n): dense {d:.2}, toeplitz {s:.2}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
