use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Symmetric Toeplitz matrix stored by its first column.
#[derive(Clone, Debug, PartialEq)]
pub struct ToeplitzMatrix {
    first_column: Vec<f64>,
}

impl ToeplitzMatrix {
    pub fn new(first_column: Vec<f64>) -> Result<Self> {
        if first_column.is_empty() {
            return Err(Error::EmptyInput("Toeplitz first column".into()));
        }
        Ok(Self { first_column })
    }

    pub fn identity(n: usize) -> Self {
        let mut c = vec![0.0; n.max(1)];
        c[0] = 1.0;
        Self { first_column: c }
    }

    pub fn dim(&self) -> usize {
        self.first_column.len()
    }

    pub fn first_column(&self) -> &[f64] {
        &self.first_column
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.first_column[i.abs_diff(j)]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.entry(i, j))
    }

    /// Direct O(n^2) product without materializing the matrix.
    pub fn direct_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), v.len())?;
        let c = &self.first_column;
        let n = c.len();
        Ok((0..n)
            .map(|i| {
                let below: f64 = (0..=i).map(|j| c[i - j] * v[j]).sum();
                let above: f64 = (i + 1..n).map(|j| c[j - i] * v[j]).sum();
                below + above
            })
            .collect())
    }
}

/// Smallest power of two `>= 2n - 2` (at least 1).
pub fn embedding_size(n: usize) -> usize {
    if n <= 1 {
        1
    } else {
        (2 * n - 2).next_power_of_two()
    }
}

/// A symmetric Toeplitz matrix embedded in a circulant of size
/// [`embedding_size`], with the circulant's eigenvalues precomputed.
///
/// Only used for products. The embedding may be indefinite even when the
/// Toeplitz block is positive definite, which does not affect matvecs.
#[derive(Clone)]
pub struct CirculantEmbedding {
    n: usize,
    spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CirculantEmbedding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantEmbedding")
            .field("n", &self.n)
            .field("size", &self.spectrum.len())
            .finish()
    }
}

impl CirculantEmbedding {
    pub fn new(t: &ToeplitzMatrix) -> Self {
        let n = t.dim();
        let size = embedding_size(n);
        let c = t.first_column();
        let mut col = vec![Complex::new(0.0, 0.0); size];
        for (j, &cj) in c.iter().enumerate() {
            col[j] = Complex::new(cj, 0.0);
            if j > 0 {
                col[size - j] = Complex::new(cj, 0.0);
            }
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        forward.process(&mut col);
        Self {
            n,
            spectrum: col,
            forward,
            inverse,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn size(&self) -> usize {
        self.spectrum.len()
    }

    pub fn spectrum(&self) -> &[Complex<f64>] {
        &self.spectrum
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n, v.len())?;
        let size = self.size();
        let scratch = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        let mut work = vec![Complex::new(0.0, 0.0); size + scratch];
        let (buf, scratch) = work.split_at_mut(size);
        for (b, &x) in buf.iter_mut().zip(v) {
            b.re = x;
        }
        self.forward.process_with_scratch(buf, scratch);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inverse.process_with_scratch(buf, scratch);
        let scale = 1.0 / size as f64;
        Ok(buf[..self.n].iter().map(|c| c.re * scale).collect())
    }
}

/// Toeplitz matrix paired with its circulant embedding.
#[derive(Clone, Debug)]
pub struct ToeplitzOperator {
    matrix: ToeplitzMatrix,
    embedding: CirculantEmbedding,
}

impl ToeplitzOperator {
    pub fn new(matrix: ToeplitzMatrix) -> Self {
        let embedding = CirculantEmbedding::new(&matrix);
        Self { matrix, embedding }
    }

    pub fn matrix(&self) -> &ToeplitzMatrix {
        &self.matrix
    }

    pub fn embedding(&self) -> &CirculantEmbedding {
        &self.embedding
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.embedding.matvec(v)
    }
}

/// Toeplitz matrix of a stationary kernel `k(lag)` on a regular grid:
/// `first_column[i] = k(i * spacing)`.
pub fn toeplitz_from_kernel(kernel: impl Fn(f64) -> f64, grid: &[f64]) -> Result<ToeplitzMatrix> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("grid".into()));
    }
    let spacing = if grid.len() > 1 { grid[1] - grid[0] } else { 0.0 };
    if grid.len() > 1 {
        let worst = grid
            .windows(2)
            .map(|w| ((w[1] - w[0]) - spacing).abs() / spacing.abs())
            .fold(0.0, f64::max);
        if spacing <= 0.0 || !(worst <= 1e-9) {
            return Err(Error::NotRegularGrid {
                deviation: if spacing <= 0.0 { f64::INFINITY } else { worst },
            });
        }
    }
    ToeplitzMatrix::new((0..grid.len()).map(|i| kernel(i as f64 * spacing)).collect())
}

/// FFT product of a symmetric Toeplitz matrix with `v`.
pub fn circulant_matvec(t: &ToeplitzMatrix, v: &[f64]) -> Result<Vec<f64>> {
    CirculantEmbedding::new(t).matvec(v)
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionError { expected, got })
    }
}
