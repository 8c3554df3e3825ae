use thiserror::Error;

use crate::qp::QpResult;
use crate::SolverReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments: mismatched dimensions, invalid options, negative scales.
    #[error("usage error: {0}")]
    Usage(String),

    /// The data cannot support the requested computation.
    #[error("data error: {0}")]
    Data(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("clustering failed: {0}")]
    Clustering(String),

    #[error("column selection failed: {0}")]
    Selection(String),

    /// A factorization or inverse could not be formed.
    #[error("solver error: {0}")]
    Solver(String),

    /// The constrained inverse did not certify within its tolerances. The
    /// best iterate is still usable.
    #[error("inverse refinement did not converge: {}", .0.report.summary())]
    QpNotConverged(Box<QpResult>),

    #[error("l1 column {col} did not converge: {}", .report.summary())]
    L1NotConverged {
        col: usize,
        best: Vec<f64>,
        report: SolverReport,
    },

    #[error("{failed} of {total} l1 column solves failed")]
    L1Aggregate { failed: usize, total: usize },

    /// The equality system has no nonnegative solution. `certificate` is a
    /// vector `y` with `Aᵀy ≥ 0` and `yᵀx < 0`.
    #[error("no nonnegative solution (certificate value yᵀx = {margin:e})")]
    Infeasible { certificate: Vec<f64>, margin: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// True for errors that still carry a usable best iterate.
    pub fn is_convergence(&self) -> bool {
        matches!(
            self,
            Error::QpNotConverged(_) | Error::L1NotConverged { .. } | Error::L1Aggregate { .. }
        )
    }
}
