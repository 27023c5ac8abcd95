use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{requested} exceeds the configured capacity of {max} ({what})")]
    Capacity {
        what: &'static str,
        requested: usize,
        max: usize,
    },

    #[error("input is not normalized: norm deviates from 1 by {deviation:e}")]
    NotNormalized { deviation: f64 },

    #[error("matrix is not Hermitian: max |rho - rho^dagger| = {deviation:e}")]
    NotHermitian { deviation: f64 },

    #[error("basis index {k} out of range 0..={n_atoms}")]
    IndexOutOfRange { k: usize, n_atoms: usize },

    #[error("unreachable outcome (n_c = {n_c}, n_d = {n_d}): probability {probability:e}")]
    UnreachableOutcome {
        n_c: usize,
        n_d: usize,
        probability: f64,
    },

    #[error("outcome inconsistent with asymptotics: arcsin argument {argument}")]
    AsymptoticDomain { argument: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("integration invariant violated at t = {t}: {detail}")]
    InvariantViolation { t: f64, detail: String },
}
