//! Minimal dense/sparse linear algebra used by the propagation and training paths.

mod dense;
mod sparse;

pub use dense::{cosine, dot, DenseMatrix};
pub use sparse::{SparseError, SparseMatrix};
