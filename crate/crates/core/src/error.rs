use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: files, parameters, malformed data.
    Data,
    /// A numerical routine failed to produce a trustworthy result.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    // numeric core
    #[error("invalid bracket [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi} have the same sign")]
    InvalidBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("{what}: iteration cap of {cap} exceeded")]
    MaxIterExceeded { what: &'static str, cap: usize },
    #[error("target {y} outside the range [{lo}, {hi}] of the map")]
    OutOfRange { y: f64, lo: f64, hi: f64 },
    #[error("map is not strictly monotone near x = {x}")]
    NotMonotone { x: f64 },
    #[error("x = {x} is within the finite-difference step of the domain boundary")]
    DomainMargin { x: f64 },

    // trajectory data
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("series '{id}': time not strictly increasing at sample {index}")]
    NonMonotoneTime { id: String, index: usize },
    #[error("series '{id}' has fewer than two samples")]
    EmptySeries { id: String },
    #[error("series '{id}': spacing {spacing} differs from delta_t = {delta_t}")]
    NonUniformGrid { id: String, spacing: f64, delta_t: f64 },
    #[error("no series spans delta_t = {delta_t}")]
    InsufficientSpan { delta_t: f64 },
    #[error("pair sets have different delta_t ({a} vs {b})")]
    MixedDeltaT { a: f64, b: f64 },
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // fitting
    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),
    #[error("{what} did not converge within {cap} iterations")]
    NoConvergence { what: &'static str, cap: usize },
    #[error("rational fit has a pole inside the data hull near x = {x}")]
    SpuriousPole { x: f64 },
    #[error("data are not monotone at x = {x}")]
    NonMonotoneData { x: f64 },
    #[error("{x} is not a fixed point (|D(x) - x| = {gap})")]
    NotAFixedPoint { x: f64, gap: f64 },
    #[error("map has no attracting fixed point with multiplier in (0, 1)")]
    NonContractive,

    // domain analysis
    #[error("subinterval [{lo}, {hi}] has no fixed endpoint")]
    NoFixedPointInClosure { lo: f64, hi: f64 },
    #[error("splinter is not monotone at step {step}")]
    NonMonotoneSequence { step: usize },

    // schroeder / julia
    #[error("{what}: slow convergence after {iterations} iterations (last relative change {last_change:e})")]
    SlowConvergence { what: &'static str, iterations: usize, last_change: f64 },
    #[error("non-positive factor D'(x) = {value} at x = {x}")]
    NonPositiveFactor { x: f64, value: f64 },
    #[error("division by a vanishing derivative at x = {x}")]
    DivisionByZero { x: f64 },
    #[error("orbit of x0 = {x0} leaves the subinterval at step {step}")]
    UndefinedSplinter { x0: f64, step: usize },
    #[error("interpolation point {x} outside the grid hull [{lo}, {hi}]")]
    InterpolationOutOfHull { x: f64, lo: f64, hi: f64 },
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    #[error("pieces do not share endpoints: {0}")]
    MismatchedEndpoints(String),
    #[error("gluing ratio is not finite at x = {x}")]
    NonFiniteRatio { x: f64 },
    #[error("fractional iterate at t = {t} leaves the tabulated range (boundary reached at t = {t_boundary})")]
    FlowOutOfRange { t: f64, t_boundary: f64 },
    #[error("multiplier {0} must be positive and different from 1")]
    InvalidMultiplier(f64),

    // diagnostics
    #[error("reference function vanishes on the grid")]
    ZeroReference,
    #[error("stability constant undefined: eps_D + eps_Dprime = 0")]
    ZeroDenominator,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Parse { .. } | NonMonotoneTime { .. } | EmptySeries { .. } | NonUniformGrid { .. }
            | InsufficientSpan { .. } | MixedDeltaT { .. } | Io { .. } | NonMonotoneData { .. }
            | InvalidParameter(_) | Precondition(_) => ErrorKind::Data,
            _ => ErrorKind::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
