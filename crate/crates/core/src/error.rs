use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ragged csv: row {row} has {found} cells, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-numeric cell {cell:?} at row {row}, column {col}")]
    NonNumeric { row: usize, col: usize, cell: String },

    #[error("raw matrix header declares {rows}x{cols} but body holds {body_bytes} bytes")]
    HeaderMismatch {
        rows: u64,
        cols: u64,
        body_bytes: usize,
    },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("activation table input {value} outside grid [{lo}, {hi}]")]
    OutsideTable { value: f64, lo: f64, hi: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("eigenvalue {value:e} below tolerance (largest eigenvalue {max:e})")]
    NegativeEigenvalue { value: f64, max: f64 },

    #[error("denominator {denom:e} is at or below the guard {guard:e}")]
    DenominatorDegenerate { denom: f64, guard: f64 },

    #[error("alpha is inconsistent with the kernel: fixed-point residual {residual:e}")]
    InconsistentAlpha { residual: f64 },

    #[error("imaginary part left the upper half-plane (min eigenvalue {min_eig:e})")]
    HalfPlane { min_eig: f64 },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("superoperator failed {probe} probe (defect {defect:e})")]
    BrokenSuperoperator { probe: &'static str, defect: f64 },

    #[error("block mismatch in {block}: defect {defect:e}")]
    BlockMismatch { block: &'static str, defect: f64 },

    #[error("linear algebra backend: {0}")]
    Linalg(String),
}

impl Error {
    /// Stable identifier used in CLI failure reports.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::RaggedRows { .. } => "RaggedRows",
            Error::NonNumeric { .. } => "NonNumeric",
            Error::HeaderMismatch { .. } => "HeaderMismatch",
            Error::Json(_) => "Json",
            Error::Shape(_) => "ShapeMismatch",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::NonFinite(_) => "NonFinite",
            Error::OutsideTable { .. } => "OutsideTable",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::NegativeEigenvalue { .. } => "NegativeEigenvalue",
            Error::DenominatorDegenerate { .. } => "DenominatorDegenerate",
            Error::InconsistentAlpha { .. } => "InconsistentAlpha",
            Error::HalfPlane { .. } => "HalfPlane",
            Error::Singular(_) => "Singular",
            Error::BrokenSuperoperator { .. } => "BrokenSuperoperator",
            Error::BlockMismatch { .. } => "BlockMismatch",
            Error::Linalg(_) => "Linalg",
        }
    }

    /// True for failures of the numerical solvers, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::NegativeEigenvalue { .. }
                | Error::DenominatorDegenerate { .. }
                | Error::InconsistentAlpha { .. }
                | Error::HalfPlane { .. }
                | Error::Singular(_)
                | Error::BrokenSuperoperator { .. }
                | Error::BlockMismatch { .. }
                | Error::Linalg(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
