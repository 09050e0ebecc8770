//! Error type shared by every engine in the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes of the interferometer engines.
///
/// All fallible public functions return [`Result`]; none panic on bad user
/// input. Panics are reserved for internal invariant violations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration field is outside its documented domain.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A function argument is outside the domain where the formula holds.
    #[error("out of domain: {0}")]
    Domain(String),

    /// The linearized pump description broke down (pump population would
    /// drop below zero for the requested squeezing).
    #[error("pump depleted: {0}")]
    PumpDepleted(String),

    /// A quadrature or root-finding loop failed to converge to tolerance.
    #[error("did not converge: {0}")]
    NotConverged(String),

    /// A numerical result violated a structural invariant (negative
    /// variance, non-finite value, ...).
    #[error("numerical failure: {0}")]
    Numerics(String),

    /// A Monte-Carlo estimate is too noisy to be reported as a result.
    #[error("monte-carlo estimate unreliable: {0}")]
    MonteCarlo(String),
}
