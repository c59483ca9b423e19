use thiserror::Error;

/// Errors raised by the planning and channel models.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    /// The unscaled result is not representable as a finite `f64`.
    #[error("result overflows f64")]
    Overflow,
    /// The margin regulariser `1 / (1 - exp(-m_d))` was evaluated at `m_d <= 0`.
    #[error("safety margin must be strictly positive, got {0}")]
    Pole(f64),
    /// Slot-indexed inputs disagree with the planning horizon.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch {
        /// Length implied by the horizon.
        expected: usize,
        /// Length actually supplied.
        found: usize,
    },
    /// The linearised trajectory problem has no strictly feasible point.
    /// `constraint` indexes [`crate::vehicle::safety_constraints`] output.
    #[error("trajectory subproblem infeasible (safety constraint {constraint}, slot {slot})")]
    Infeasible {
        /// Index of the most violated safety constraint.
        constraint: usize,
        /// Planning slot (1-based) of that constraint.
        slot: usize,
    },
    /// Newton's method could not factorise its system.
    #[error("numerical failure: {0}")]
    Numerical(&'static str),
}

/// Crate result alias.
pub type Result<T> = core::result::Result<T, Error>;
