use std::fmt;

use thiserror::Error;

/// One term of the block-pairwise objective: a block potential or an edge potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Node(usize),
    Edge(usize, usize),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Node(i) => write!(f, "block {i}"),
            Term::Edge(i, j) => write!(f, "edge ({i},{j})"),
        }
    }
}

#[derive(Debug, Error)]
pub enum GprfError {
    #[error("invalid hyperparameter {name}: {value}")]
    InvalidHyperparameter { name: String, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("matrix of dimension {dim} is not positive definite after jitter escalation")]
    NotPositiveDefinite { dim: usize },

    #[error("factorization failed for {term}: {source}")]
    TermFailure {
        term: Term,
        #[source]
        source: Box<GprfError>,
    },

    #[error("wrong partition kind: {0}")]
    WrongPartitionKind(String),

    #[error("problem size n={n} exceeds the dense limit of {limit} points")]
    SizeGuard { n: usize, limit: usize },

    #[error("combined committee precision is indefinite (smallest eigenvalue {min_eigenvalue:e})")]
    IndefinitePrecision { min_eigenvalue: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl GprfError {
    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            GprfError::NotPositiveDefinite { .. }
            | GprfError::TermFailure { .. }
            | GprfError::IndefinitePrecision { .. } => 2,
            GprfError::SizeGuard { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, GprfError>;
