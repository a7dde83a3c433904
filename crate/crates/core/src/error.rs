use thiserror::Error;

/// Errors produced by the simulator and its analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("grid Peclet number {peclet} >= 2 for d={d}, alpha={alpha}; use n >= {min_n} cells per axis")]
    Peclet {
        peclet: f64,
        d: f64,
        alpha: f64,
        min_n: usize,
    },

    #[error("field expression error: {0}")]
    Expression(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("singular factorization (zero pivot at row {row})")]
    SingularMatrix { row: usize },

    #[error("non-finite value detected at t={t} ({what})")]
    NonFinite { t: f64, what: String },

    #[error("operator is not Metzler: off-diagonal entry {value} at ({row}, {col})")]
    NotMetzler { row: usize, col: usize, value: f64 },

    #[error(
        "eigen iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    EigenNoConvergence { iterations: usize, residual: f64 },

    #[error("Perron positivity lost: min/max of eigenvector is {ratio:e}")]
    PerronPositivity { ratio: f64 },

    #[error("dense oracle limited to n <= {max}, got {n}")]
    OracleTooLarge { n: usize, max: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("population not persistent at these parameters (steady state collapsed to zero)")]
    NotPersistent,

    #[error("marginal/bifurcation point suspected: {0}")]
    SingularJacobian(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("checks failed: {0}")]
    ChecksFailed(String),

    #[error("anomaly gate: {0}")]
    Anomaly(String),

    #[error("unknown figure preset `{0}`")]
    UnknownPreset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// Process exit status associated with this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. }
            | Error::Peclet { .. }
            | Error::Expression(_)
            | Error::Config(_)
            | Error::UnknownPreset(_)
            | Error::Unsupported(_) => 2,
            Error::Anomaly(_) => 4,
            _ => 3,
        }
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::Peclet { .. } => "peclet",
            Error::Expression(_) => "expression",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::SingularMatrix { .. } => "singular_matrix",
            Error::NonFinite { .. } => "non_finite",
            Error::NotMetzler { .. } => "not_metzler",
            Error::EigenNoConvergence { .. } => "eigen_no_convergence",
            Error::PerronPositivity { .. } => "perron_positivity",
            Error::OracleTooLarge { .. } => "oracle_too_large",
            Error::NoConvergence { .. } => "no_convergence",
            Error::NotPersistent => "not_persistent",
            Error::SingularJacobian(_) => "singular_jacobian",
            Error::Unsupported(_) => "unsupported",
            Error::ChecksFailed(_) => "checks_failed",
            Error::Anomaly(_) => "anomaly",
            Error::UnknownPreset(_) => "unknown_preset",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
