use thiserror::Error;

/// Errors produced by the geometry, estimation and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("tangent vector is not in the log image: quantiles decrease at level index {index}")]
    NotInLogImage { index: usize },

    #[error("support violation: value {value} outside [{lower}, {upper}]")]
    SupportViolation { value: f64, lower: f64, upper: f64 },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate density: total mass {0} is not positive")]
    DegenerateDensity(f64),

    #[error("tangent objects live over different base curves")]
    BaseMismatch,

    #[error("requested {requested} components but only {available} are available")]
    RankError { requested: usize, available: usize },

    #[error("sample size mismatch: {left} vs {right}")]
    SampleMismatch { left: usize, right: usize },

    #[error("subject sets differ between X and Y: {0}")]
    SubjectMismatch(String),

    #[error("eigenvalue {component} inside the truncation is zero")]
    SingularTruncation { component: usize },

    #[error("fold {fold} has {size} subjects, need at least 2")]
    FoldError { fold: usize, size: usize },

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
