use thiserror::Error;

/// Everything that can go wrong while building inputs, estimating statistics
/// or solving for weights.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate panel: {0}")]
    DegeneratePanel(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty support: no available observation carries positive weight")]
    EmptySupport,

    #[error("negative variance {value:e} from the variance assembly; moment inputs are inconsistent")]
    NegativeVariance { value: f64 },

    #[error("validity diagnostic undefined because the mean of R is zero")]
    UndefinedDiagnostic,

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NonPsdMatrix { min_eigenvalue: f64 },

    #[error("active-set solver did not converge within {0} iterations")]
    MaxIterations(usize),

    #[error("no nonnegative weights cancel the missing-data bias: all deviations share one sign")]
    InfeasibleSigns,

    #[error("site index {index} out of range for {n} sites")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("exact enumeration supports at most {max} sites, got {n}")]
    TooManySites { n: usize, max: usize },

    #[error("availability draw left no weighted observation at time step {t}")]
    AllMissingPattern { t: usize },

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl SpatError {
    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            SpatError::DimensionMismatch(_) => "dimension-mismatch",
            SpatError::NonFinite(_) => "non-finite-value",
            SpatError::DegeneratePanel(_) => "degenerate-panel",
            SpatError::InvalidWeights(_) => "invalid-weights",
            SpatError::InvalidParameter(_) => "invalid-parameter",
            SpatError::EmptySupport => "empty-support",
            SpatError::NegativeVariance { .. } => "negative-variance",
            SpatError::UndefinedDiagnostic => "undefined-diagnostic",
            SpatError::NonPsdMatrix { .. } => "non-psd-matrix",
            SpatError::MaxIterations(_) => "max-iterations",
            SpatError::InfeasibleSigns => "infeasible-signs",
            SpatError::IndexOutOfRange { .. } => "index-out-of-range",
            SpatError::TooManySites { .. } => "too-many-sites",
            SpatError::AllMissingPattern { .. } => "all-missing-pattern",
            SpatError::Io(_) => "io-error",
            SpatError::Parse(_) => "parse-error",
        }
    }

    /// Process exit status used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        EXIT_CODES
            .iter()
            .find(|(c, _)| *c == self.category())
            .map(|&(_, code)| code)
            .unwrap_or(1)
    }
}

/// Exit status for each error category. 2 is left to usage errors.
pub const EXIT_CODES: [(&str, i32); 16] = [
    ("io-error", 3),
    ("parse-error", 4),
    ("dimension-mismatch", 5),
    ("non-finite-value", 6),
    ("degenerate-panel", 7),
    ("invalid-weights", 8),
    ("invalid-parameter", 9),
    ("empty-support", 10),
    ("negative-variance", 11),
    ("undefined-diagnostic", 12),
    ("non-psd-matrix", 13),
    ("max-iterations", 14),
    ("infeasible-signs", 15),
    ("index-out-of-range", 16),
    ("too-many-sites", 17),
    ("all-missing-pattern", 18),
];

impl From<std::io::Error> for SpatError {
    fn from(e: std::io::Error) -> Self {
        SpatError::Io(e.to_string())
    }
}

impl From<csv::Error> for SpatError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            SpatError::Io(e.to_string())
        } else {
            SpatError::Parse(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, SpatError>;
