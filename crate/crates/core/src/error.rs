use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the estimation pipeline.
///
/// Every variant maps to a stable machine-readable code (see [`Error::code`]),
/// which is what the CLI writes into its error report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("coordinate {coord} of point is {value}, outside [0, 1]")]
    Domain { coord: usize, value: f64 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NonSymmetric(f64),

    #[error("invalid split plan: {0}")]
    InvalidPlan(String),

    #[error("group {group}: {role} gram matrix has rank 0")]
    DegenerateGroup { group: usize, role: &'static str },

    #[error("group {group}: {role} gram matrix fails the eigenvalue gate (min eigenvalue {min_eig:e})")]
    GateFailed {
        group: usize,
        role: &'static str,
        min_eig: f64,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("rate grid needs at least 3 strictly increasing sample sizes, got {0}")]
    RateGridTooSmall(usize),

    #[error("row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable error code used in machine-readable reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "INVALID_SPEC",
            Error::Domain { .. } => "DOMAIN_ERROR",
            Error::EmptyInput(_) => "EMPTY_INPUT",
            Error::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            Error::NonSymmetric(_) => "NON_SYMMETRIC",
            Error::InvalidPlan(_) => "INVALID_PLAN",
            Error::DegenerateGroup { .. } => "DEGENERATE_GROUP",
            Error::GateFailed { .. } => "GATE_FAILED",
            Error::Singular(_) => "SINGULAR_MATRIX",
            Error::Unsupported(_) => "UNSUPPORTED",
            Error::RateGridTooSmall(_) => "RATE_GRID_TOO_SMALL",
            Error::Data { .. } => "DATA_ERROR",
            Error::MissingColumn(_) => "MISSING_COLUMN",
            Error::Config(_) => "CONFIG_ERROR",
            Error::Csv(_) => "CSV_ERROR",
            Error::Io(_) => "IO_ERROR",
            Error::Json(_) => "JSON_ERROR",
        }
    }
}
