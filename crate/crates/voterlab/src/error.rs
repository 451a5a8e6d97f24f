//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The kernel's support graph is not strongly connected.
    #[error("kernel not irreducible")]
    NotIrreducible,

    /// Detailed-balance check failed where a reversible kernel is required.
    #[error("spectral gap requires reversibility")]
    NotReversible,

    /// Structurally invalid input (shape, sign, normalisation).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A size or cost guard refused the requested computation.
    #[error("size guard: {0}")]
    SizeGuard(String),

    /// An iterative solver stopped before reaching its residual target.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// Query outside the domain covered by a generated object.
    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("serialization: {0}")]
    Serialization(String),
}
