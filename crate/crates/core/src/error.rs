use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: String, message: String },

    #[error("degenerate column '{0}'")]
    DegenerateColumn(String),

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("parameter budget exceeded: {0}")]
    Budget(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("evidence has zero probability under the model")]
    ImpossibleEvidence,

    #[error("incompatible model: {0}")]
    IncompatibleModel(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 2 usage/config, 3 data, 4 numeric/training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::SchemaMismatch(_)
            | Error::Parse { .. }
            | Error::DegenerateColumn(_)
            | Error::InfeasibleSplit(_)
            | Error::InsufficientData(_)
            | Error::DegenerateTarget(_)
            | Error::IncompatibleModel(_)
            | Error::Graph(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => 3,
            Error::Domain(_)
            | Error::Budget(_)
            | Error::Unsupported(_)
            | Error::ImpossibleEvidence
            | Error::Numeric(_)
            | Error::Divergence(_) => 4,
        }
    }

    /// Stable machine-readable tag used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SchemaMismatch(_) => "schema-mismatch",
            Error::Parse { .. } => "parse",
            Error::DegenerateColumn(_) => "degenerate-column",
            Error::InfeasibleSplit(_) => "infeasible-split",
            Error::Domain(_) => "domain",
            Error::Graph(_) => "graph",
            Error::Budget(_) => "budget",
            Error::Unsupported(_) => "unsupported",
            Error::InsufficientData(_) => "insufficient-data",
            Error::DegenerateTarget(_) => "degenerate-target",
            Error::ImpossibleEvidence => "impossible-evidence",
            Error::IncompatibleModel(_) => "incompatible-model",
            Error::Numeric(_) => "numeric",
            Error::Divergence(_) => "divergence",
            Error::Usage(_) => "usage",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
