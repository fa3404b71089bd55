//! Dense linear algebra and deterministic randomness shared by every other module.

mod linalg;
mod matrix;
mod rng;

use thiserror::Error;

pub use linalg::{condition_one, invert, numerical_rank, solve_least_squares, Lu, PIVOT_TOLERANCE};
pub use matrix::Matrix;
pub use rng::{rng_matrix, rng_permutation, Distribution, Rng, Seed};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {}x{} vs {}x{}", left.0, left.1, right.0, right.1)]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("matrix dimensions must be >= 1, got {rows}x{cols}")]
    EmptyDimension { rows: usize, cols: usize },
    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular to working precision at pivot {pivot} (|pivot| = {magnitude:e})")]
    Singular { pivot: usize, magnitude: f64 },
    #[error("rank deficient: numerical rank {rank}, need {required}")]
    RankDeficient { rank: usize, required: usize },
}
