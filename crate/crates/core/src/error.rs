use thiserror::Error;

/// Errors raised by the spectral, adiabatic and propagation pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible schedule: ramps alone exceed the momentum target, need N >= {minimal_n}")]
    Infeasible { minimal_n: u64 },

    #[error("{what} did not converge (residual {residual:e})")]
    Convergence { what: &'static str, residual: f64 },

    #[error("Floquet eigenvalue modulus {modulus} exceeds 1 + 1e-10")]
    ContractionViolation { modulus: f64 },

    #[error("linewidth {gamma:e} E_r is negative beyond the roundoff clamp")]
    NegativeLinewidth { gamma: f64 },

    #[error("Landau-Zener probability is 1, effective linewidth is infinite")]
    InfiniteLinewidth,

    #[error("ambiguous ladder assignment for target {target} E_r: candidates {first} and {second}")]
    AmbiguousAssignment { target: f64, first: f64, second: f64 },

    #[error("path point (V0 = {v0}, F = {force}) lies outside the tabulated spectrum")]
    Extrapolation { v0: f64, force: f64 },

    #[error("crossing classification indeterminate: {0}")]
    Classification(String),

    #[error("finite-difference step rejected: {0}")]
    StepSize(String),

    #[error("no interior extremum in [{lo}, {hi}]")]
    NoInteriorExtremum { lo: f64, hi: f64 },

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("simulation config rejected: {0}")]
    SimConfig(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
