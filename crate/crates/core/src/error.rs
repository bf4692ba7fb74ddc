use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported SBP order {0} (expected 2, 4 or 6)")]
    UnsupportedOrder(usize),
    #[error("grid of {n} points is too small for the order-{order} boundary closure (need at least {min})")]
    GridTooSmall { n: usize, order: usize, min: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("coefficient table: line {line}: {msg}")]
    Table { line: usize, msg: String },
    #[error("nonpositive coefficient {value} at index {index}")]
    NonPositiveCoefficient { index: usize, value: f64 },
    #[error("incompatible intervals: coarse [{0}, {1}] vs fine [{2}, {3}]")]
    IncompatibleIntervals(f64, f64, f64, f64),
    #[error("wavelength band [{lambda_min}, {lambda_max}] km is unresolvable with spacing {h} km (need lambda_min >= {min_allowed})")]
    UnresolvableBand { lambda_min: f64, lambda_max: f64, h: f64, min_allowed: f64 },
    #[error("folded mapping: jacobian {jacobian} at block {block} node ({i}, {j})")]
    FoldedMapping { block: usize, i: usize, j: usize, jacobian: f64 },
    #[error("friction invariant violated: {0}")]
    FrictionInvariant(String),
    #[error("bracket violation at fault point {index}: V* bracket [{lo}, {hi}] residuals {r_lo}, {r_hi}")]
    BracketViolation { index: usize, lo: f64, hi: f64, r_lo: f64, r_hi: f64 },
    #[error("nonpositive adjoint denominator {0} at fault point {1}")]
    AdjointDenominator(f64, usize),
    #[error("instability detected at step {step} (t = {time} s): field norm {norm:e} exceeds limit {limit:e}")]
    Unstable { step: usize, time: f64, norm: f64, limit: f64 },
    #[error("receiver at ({x}, {y}) km: {msg}")]
    Receiver { x: f64, y: f64, msg: String },
    #[error("data series for receiver {receiver} has {got} stages, simulation needs {need}")]
    DataTooShort { receiver: usize, got: usize, need: usize },
    #[error("history mismatch: {0}")]
    HistoryMismatch(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("interrupted")]
    Interrupted,
}

pub type Result<T> = std::result::Result<T, Error>;
