//! Numerical toolkit for mean field game master equations with
//! non-separable Hamiltonians: displacement monotonicity checks, a 1-d
//! finite-volume MFG solver, master-surface evaluation, propagation of the
//! monotonicity profile, and a closed-form linear-quadratic benchmark.

pub mod error;
pub mod hamiltonian;
pub mod linalg;
pub mod measures;
pub mod mfg;
pub mod monotonicity;
pub mod propagation;
pub mod lq_oracle;
pub mod master;
mod transport;

pub use error::{Error, Result};
pub use measures::{DiscreteMeasure, TangentSample};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
