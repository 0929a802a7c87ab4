//! Crate-wide error type.
//!
//! Errors fall into three classes that the CLI maps to distinct exit codes:
//! configuration problems (exit 2), data problems (exit 3), and numerical
//! failures (exit 4). See [`Error::exit_code`].

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- configuration ---
    #[error("invalid config at `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("unknown transform `{0}`")]
    UnknownTransform(String),

    #[error("model not identifiable: {0}")]
    NotIdentifiable(String),

    #[error("method/family mismatch: {0}")]
    MethodMismatch(String),

    // --- data ---
    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),

    #[error("non-numeric cell at row {row}, column `{column}`: `{value}`")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("no rows left after dropping incomplete records")]
    EmptyAfterFiltering,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("exposure has {found} distinct values; at least {need} are required")]
    TooFewDistinctExposures { found: usize, need: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    // --- numerical ---
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("linear system is singular or not positive definite: {0}")]
    SingularSystem(String),

    #[error("IRLS did not converge after {iterations} iterations (last relative step {last_step:.3e})")]
    NotConverged {
        iterations: usize,
        last_step: f64,
        last_coef: Vec<f64>,
    },

    #[error("quasi-separation detected: |linear predictor| exceeded {bound}")]
    QuasiSeparation { bound: f64 },

    #[error("degenerate knots: {0}")]
    DegenerateKnots(String),

    #[error("difference order {order} must be smaller than basis dimension {k}")]
    InvalidOrder { order: usize, k: usize },

    #[error("covariance of tested coefficients is singular")]
    SingularThetaCov,

    #[error("covariance rank {found} is below the {need} eigenvalues required by the test")]
    RankTooLow { found: usize, need: usize },

    #[error("tail-probability quadrature failed: {0}")]
    QuadratureFailure(String),

    #[error("pve must lie strictly in (0, 1), got {0}")]
    InvalidPve(f64),

    #[error("{failed} of {total} replicates failed (more than 5%); first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    // --- io (classified by context) ---
    #[error("io error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on `{path}`: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 = config, 3 = data, 4 = numerical.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            ConfigInvalid { .. } | UnknownTransform(_) | NotIdentifiable(_)
            | MethodMismatch(_) => 2,
            MissingColumn(_)
            | NonNumericCell { .. }
            | EmptyAfterFiltering
            | NonFinite(_)
            | TooFewDistinctExposures { .. }
            | Invalid(_)
            | DegenerateKnots(_)
            | InvalidOrder { .. }
            | InvalidPve(_)
            | Io { .. }
            | Csv { .. }
            | Json(_) => 3,
            RankDeficient(_)
            | SingularSystem(_)
            | NotConverged { .. }
            | QuasiSeparation { .. }
            | SingularThetaCov
            | RankTooLow { .. }
            | QuadratureFailure(_)
            | TooManyFailures { .. } => 4,
        }
    }
}
