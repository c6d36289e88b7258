//! Structured covariance algebra: symmetric Toeplitz matrices with FFT
//! products through a circulant embedding, Kronecker operators with
//! factor-wise solves, conjugate gradients and a dense Cholesky reference.

pub mod dense;
pub mod operator;
pub mod toeplitz;

pub use dense::{dense_cholesky_solve, dense_matvec, JitteredCholesky};
pub use operator::{
    cg_solve, kron_matvec, kron_solve, CgSolution, KroneckerOperator, StructuredOperator,
    DENSE_SOLVE_LIMIT,
};
pub use toeplitz::{
    circulant_matvec, embedding_size, toeplitz_from_kernel, CirculantEmbedding, ToeplitzMatrix,
    ToeplitzOperator,
};
