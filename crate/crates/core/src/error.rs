use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HighwayError {
    #[error("density must be nonnegative, got {0}")]
    NegativeDensity(f64),
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("degenerate segment {segment}: total density {rho} at or below floor")]
    DegenerateSegment { segment: usize, rho: f64 },
    #[error("non-finite value at segment {segment}")]
    NonFinite { segment: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Highway(#[from] HighwayError),
    #[error("simulation produced NaN at step {step}, segment {segment}")]
    NaN { step: usize, segment: usize },
    #[error("breakpoints must be sorted by time: {0}")]
    UnsortedBreakpoints(String),
    #[error("empty profile")]
    EmptyProfile,
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Highway(#[from] HighwayError),
    #[error("exit rate {rate} at segment {segment} outside [0, 1)")]
    ExitRate { segment: usize, rate: f64 },
    #[error("observability needs at least {needed} consecutive systems, got {got}")]
    TooFewSystems { needed: usize, got: usize },
    #[error("output index {index} outside 1..={n}")]
    OutputIndex { index: usize, n: usize },
    #[error("system dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("{what} must be symmetric positive definite")]
    NotPositiveDefinite { what: &'static str },
    #[error("measurement covariance must be positive, got {0}")]
    MeasurementCovariance(f64),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("filter diverged to a non-finite value")]
    NonFinite,
}
