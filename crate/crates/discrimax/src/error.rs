//! Error types shared across the crate.
//!
//! A single [`Error`] enum covers every failure mode so that library results
//! compose with `?` all the way up to the CLI, where [`Error::exit_code`]
//! maps each variant onto the documented process exit codes:
//!
//! * `1` — the input was malformed (configuration, model expressions,
//!   design files),
//! * `2` — the numerics failed (no bracket, non-convergence, domain
//!   violations discovered at evaluation time).

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The expression text could not be parsed. `offset` is the byte
    /// position of the offending character; `expected` lists the token
    /// classes that would have been legal there.
    #[error("parse error at byte {offset}: expected {expected}")]
    Parse { offset: usize, expected: String },

    /// Parameter indices must be contiguous starting at `p1`. Raised when a
    /// parameter is skipped, e.g. an expression using `p1` and `p3` but
    /// never `p2`.
    #[error("parameter indices must be contiguous: p{missing} is unused but p{max} appears")]
    Arity { missing: usize, max: usize },

    /// A mathematical argument was outside its legal domain (bad integration
    /// bounds, a quantile outside (0,1), a non-positive mean for a lognormal
    /// family, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative procedure exhausted its budget before reaching its
    /// tolerance.
    #[error("{context} failed to converge: {detail}")]
    NonConvergent { context: &'static str, detail: String },

    /// A variance function evaluated to a non-positive value.
    #[error("variance must be positive: got {value:.6e} at x = {x}")]
    InvalidVariance { x: f64, value: f64 },

    /// An operation that needs a bounded support was given an unbounded
    /// density family.
    #[error("{context} requires a density with bounded support")]
    UnboundedSupport { context: &'static str },

    /// A prescribed mean fell outside the (open) support of the reference
    /// density, so no reweighting can attain it.
    #[error("prescribed mean {mean:.6} lies outside the support ({lo:.6}, {hi:.6}) at x = {x}")]
    OutOfSupport { x: f64, mean: f64, lo: f64, hi: f64 },

    /// Root bracketing failed: the target function has no sign change over
    /// the searched interval.
    #[error("no sign change over bracket [{lo:.6e}, {hi:.6e}]")]
    NoBracket { lo: f64, hi: f64 },

    /// Two densities whose divergence was requested do not live on a common
    /// support.
    #[error("support mismatch: [{lo1:.6}, {hi1:.6}] vs [{lo2:.6}, {hi2:.6}]")]
    SupportMismatch { lo1: f64, hi1: f64, lo2: f64, hi2: f64 },

    /// No start of the inner minimisation met its convergence tolerances.
    #[error("inner minimisation did not converge (best objective {best:.6e})")]
    InnerNonConvergent { best: f64 },

    /// Efficiency was requested against a reference value of (numerically)
    /// zero.
    #[error("efficiency reference value is zero")]
    ZeroReference,

    /// The problem configuration was rejected. `line` is 1-based; `field`
    /// names the offending section/key.
    #[error("config error at line {line} ({field}): {message}")]
    Config { line: usize, field: String, message: String },

    /// A design file or literal was rejected.
    #[error("invalid design: {0}")]
    Design(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for malformed input, 2 for numerical
    /// failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Arity { .. }
            | Error::Config { .. }
            | Error::Design(_)
            | Error::Io(_)
            | Error::Json(_) => 1,
            Error::Domain(_)
            | Error::NonConvergent { .. }
            | Error::InvalidVariance { .. }
            | Error::UnboundedSupport { .. }
            | Error::OutOfSupport { .. }
            | Error::NoBracket { .. }
            | Error::SupportMismatch { .. }
            | Error::InnerNonConvergent { .. }
            | Error::ZeroReference => 2,
        }
    }
}

/// Non-fatal diagnostics accumulated during a computation and surfaced in
/// reports instead of aborting it.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// Several inner-minimisation starts reached the same objective value at
    /// materially different parameter vectors: the reported minimiser is not
    /// unique.
    NonUniqueMinimum { value: f64, theta_a: Vec<f64>, theta_b: Vec<f64> },
    /// The outer optimisation stopped improving before reaching its target
    /// residual.
    Stall { iteration: usize, residual: f64 },
    /// Design weights did not sum to one and were renormalised.
    WeightsRenormalised { sum: f64 },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::NonUniqueMinimum { value, theta_a, theta_b } => write!(
                f,
                "non-unique inner minimum: value {value:.6e} attained at {theta_a:?} and {theta_b:?}"
            ),
            Warning::Stall { iteration, residual } => write!(
                f,
                "optimiser stalled at iteration {iteration} with residual {residual:.3e}"
            ),
            Warning::WeightsRenormalised { sum } => {
                write!(f, "design weights summed to {sum:.12}; renormalised")
            }
        }
    }
}
