//! Shared error type. Variants are grouped by the failure class they report:
//! contract violations (bad arguments), numeric failures, format errors, and
//! I/O. The CLI maps these onto exit codes, so new variants should stay in one
//! of these classes.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Tensor shapes disagree for the requested operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A forward or backward pass produced a NaN or infinity.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Training diverged (non-finite loss).
    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    /// A search-space budget admits no allocation.
    #[error("infeasible budget {budget} for space with bounds {bounds:?} (size range [{min_size}, {max_size}])")]
    InfeasibleBudget {
        budget: f64,
        bounds: Vec<usize>,
        min_size: f64,
        max_size: f64,
    },

    /// Exhaustive enumeration was asked to expand too many allocations.
    #[error("search space has {size} allocations, above the exhaustive guard of {limit}")]
    SpaceTooLarge { size: u128, limit: u128 },

    /// A candidate evaluation failed during search; the offending allocation
    /// is attached.
    #[error("evaluation failed for allocation {allocation}: {source}")]
    EvalFailed {
        allocation: String,
        #[source]
        source: Box<Error>,
    },

    /// A binary or text format did not parse.
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// Configuration file rejected.
    #[error("config error: {0}")]
    Config(String),

    /// A pipeline phase failed after a partial report was written.
    #[error("phase failed: {0}")]
    Phase(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (config/CLI), as opposed to
    /// runtime failures.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Contract(_))
    }
}
