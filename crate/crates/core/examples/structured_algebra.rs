// Toeplitz, Kronecker and conjugate-gradient algebra checked against dense
// matrices.

use mobgp::gp::KernelSpec;
use mobgp::linalg::{
    cg_solve, circulant_matvec, dense_cholesky_solve, kron_matvec, kron_solve, toeplitz_from_kernel,
    KroneckerOperator, StructuredOperator, ToeplitzMatrix,
};
use nalgebra::{DMatrix, DVector};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let kernel = KernelSpec::rbf(6.0, 1.0).non_periodic();
    let grid: Vec<f64> = (0..500).map(|i| i as f64 * 0.5).collect();
    let t = toeplitz_from_kernel(|dt| kernel.eval(dt), &grid)?;
    let v: Vec<f64> = (0..grid.len()).map(|i| (i as f64 * 0.37).sin()).collect();
    let fast = circulant_matvec(&t, &v)?;
    let dense = (t.to_dense() * DVector::from_column_slice(&v)).as_slice().to_vec();
    println!("circulant matvec, n={}: max |diff| {:.2e}", grid.len(), max_abs_diff(&fast, &dense));

    // K + 0.01 I solved by CG on the structured operator and by Cholesky
    let op = StructuredOperator::toeplitz(t.clone()).shifted(0.01);
    let cg = cg_solve(&op, &v, 1e-10, 5000)?;
    let chol = dense_cholesky_solve(&op.to_dense()?, &v, 0.0)?;
    println!("cg: {} iterations, max |diff| vs Cholesky {:.2e}", cg.iterations, max_abs_diff(&cg.solution, &chol));

    // day x hour product kernel
    let day = ToeplitzMatrix::new((0..7).map(|d| 0.6f64.powi(d)).collect())?;
    let hour = ToeplitzMatrix::new((0..24).map(|h| (-(h as f64 / 3.0).powi(2) / 2.0).exp() + if h == 0 { 0.1 } else { 0.0 }).collect())?;
    let kron = KroneckerOperator::new(vec![StructuredOperator::toeplitz(day), StructuredOperator::toeplitz(hour)])?;
    let w: Vec<f64> = (0..kron.dim()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
    let full: DMatrix<f64> = kron.to_dense()?;
    let kv = kron_matvec(&kron, &w)?;
    let x = kron_solve(&kron, &w)?;
    let residual = &full * DVector::from_column_slice(&x) - DVector::from_column_slice(&w);
    println!(
        "kronecker 7x24: matvec max |diff| {:.2e}, solve residual {:.2e}",
        max_abs_diff(&kv, (&full * DVector::from_column_slice(&w)).as_slice()),
        residual.amax()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
