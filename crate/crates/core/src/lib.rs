//! Exponential dichotomies for noninvertible linear difference equations
//! x(k+1) = A(k)x(k).
//!
//! The crate verifies and estimates dichotomy certificates on finite windows,
//! performs projection surgery and end extension, computes perturbed dichotomies
//! through a Green's kernel fixed point, and checks finite-time hypotheses.

pub mod dichotomy;
pub mod error;
pub mod extension;
pub mod finitetime;
pub mod linalg;
pub mod projections;
pub mod report;
pub mod roughness;
pub mod system;

pub use error::{Error, Obstruction, Result};
pub use linalg::{Matrix, Subspace, Tolerances, Vector};
