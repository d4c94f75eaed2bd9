use std::fmt;

use serde::Serialize;

/// Reason an extension step cannot proceed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Obstruction {
    /// The preimage of the stable range has the wrong dimension.
    DimensionMismatch,
    /// The transition is not one to one on the unstable subspace.
    NotInjectiveOnNullspace,
    /// The kernel of the transition leaves the stable range.
    KernelNotInStable,
}

impl fmt::Display for Obstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Obstruction::DimensionMismatch => "dimension mismatch",
            Obstruction::NotInjectiveOnNullspace => "not injective on nullspace",
            Obstruction::KernelNotInStable => "kernel not in stable subspace",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("index {k} outside {what}")]
    OutOfRange { k: i64, what: String },
    #[error("no coefficient rule resolves k = {0}")]
    Unresolvable(i64),
    #[error("transition is not injective on the nullspace between {m} and {k}")]
    NotInjectiveOnNullspace { m: i64, k: i64 },
    #[error("transition product overflowed between {m} and {k}")]
    OverflowDetected { m: i64, k: i64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("subspaces are not complementary: {0}")]
    NotAComplement(String),
    #[error("required subspace intersects the one being complemented")]
    ContainingIntersects,
    #[error("projection family is not invariant (residual {residual:e} at k = {k})")]
    NotInvariant { k: i64, residual: f64 },
    #[error("no decay detected on the window")]
    NoDecay,
    #[error("singular value growth rates do not separate (closest slope {0:e})")]
    NoGap(f64),
    #[error("ranks differ: {0} vs {1}")]
    RankMismatch(usize, usize),
    #[error("stable and unstable subspaces intersect at the junction")]
    TransversalityFailure,
    #[error("kernel of the backward transition is not contained in the complement")]
    ComplementConstraintViolated,
    #[error("extension obstructed at j = {at}: {obstruction}")]
    ExtensionObstructed { at: i64, obstruction: Obstruction },
    #[error("perturbation too large: rho*delta = {0}")]
    NotAdmissible(f64),
    #[error("window too small: truncation bound {bound:e} exceeds {tol:e}")]
    WindowTooSmall { bound: f64, tol: f64 },
    #[error("sigma = {0} is not below 1")]
    SigmaTooLarge(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Stable machine-readable code for reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::OutOfRange { .. } => "out_of_range",
            Error::Unresolvable(_) => "unresolvable",
            Error::NotInjectiveOnNullspace { .. } => "not_injective_on_nullspace",
            Error::OverflowDetected { .. } => "overflow_detected",
            Error::NonFinite(_) => "non_finite",
            Error::NotAComplement(_) => "not_a_complement",
            Error::ContainingIntersects => "containing_intersects",
            Error::NotInvariant { .. } => "not_invariant",
            Error::NoDecay => "no_decay",
            Error::NoGap(_) => "no_gap",
            Error::RankMismatch(..) => "rank_mismatch",
            Error::TransversalityFailure => "transversality_failure",
            Error::ComplementConstraintViolated => "complement_constraint_violated",
            Error::ExtensionObstructed { .. } => "extension_obstructed",
            Error::NotAdmissible(_) => "not_admissible",
            Error::WindowTooSmall { .. } => "window_too_small",
            Error::SigmaTooLarge(_) => "sigma_too_large",
            Error::InvalidInput(_) => "invalid_input",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
