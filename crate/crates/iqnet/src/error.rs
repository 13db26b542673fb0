use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("kernel has no entry at offset 0 or its weight is not exactly 1")]
    MissingCenter,
    #[error("kernel weight at {offset:?} does not equal the weight at the negated offset")]
    AsymmetricKernel { offset: Vec<i64> },
    #[error("negative kernel weight {weight} at {offset:?}")]
    NegativeWeight { offset: Vec<i64>, weight: f64 },
    #[error("offset {offset:?} has {found} coordinates, kernel dimension is {expected}")]
    DimensionMismatch { offset: Vec<i64>, expected: usize, found: usize },
    #[error("duplicate kernel entry at offset {offset:?}")]
    DuplicateOffset { offset: Vec<i64> },
    #[error("invalid time window [{start}, {end})")]
    InvalidWindow { start: f64, end: f64 },
    #[error("observation window contains site index {site}, domain has {site_count} sites")]
    InvalidObserveWindow { site: usize, site_count: usize },
    #[error("coupled variants disagree on dimension or site set")]
    ShapeMismatch,
    #[error("state space of {states} states exceeds the limit of {limit}")]
    StateSpaceTooLarge { states: usize, limit: usize },
    #[error("power iteration did not converge in {max_iter} iterations (last delta {delta:e})")]
    NoConvergence { max_iter: usize, delta: f64 },
    #[error("need at least {needed} samples after burn-in, have {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("tail has {got} usable points past x_min, need at least {needed}")]
    TailTooShort { needed: usize, got: usize },
    #[error("offset {offset} too large for torus side {side}")]
    OffsetTooLarge { offset: i64, side: i64 },
    #[error("unstable parameters: lambda = {lambda} is not below 1/sum_a = {critical}")]
    Unstable { lambda: f64, critical: f64 },
    #[error("c = {c} is outside the admissible range [0, c0 = {c0})")]
    COutOfRange { c: f64, c0: f64 },
    #[error("half-width {n} too small: need n >= {needed} for strip half-width {strip} and window radius {window}")]
    DomainTooSmall { n: i64, needed: i64, strip: i64, window: i64 },
}

pub type Result<T> = std::result::Result<T, Error>;
