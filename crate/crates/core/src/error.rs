use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Numeric => "numeric",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no bars")]
    NoBars,
    #[error("bad header: expected `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },
    #[error("malformed row {row}: {msg}")]
    MalformedRow { row: usize, msg: String },
    #[error("unsorted dates at row {row}")]
    UnsortedDates { row: usize },
    #[error("duplicate date at row {row}")]
    DuplicateDate { row: usize },
    #[error("non-positive price at row {row}")]
    NonPositivePrice { row: usize },
    #[error("inconsistent bar at row {row}: {msg}")]
    InconsistentBar { row: usize, msg: String },

    #[error("empty intersection of series dates")]
    EmptyIntersection,
    #[error("fewer than 2 shared dates ({0})")]
    TooFewSharedDates(usize),
    #[error("duplicate symbol {0}")]
    DuplicateSymbol(String),
    #[error("unknown symbol {0}")]
    UnknownSymbol(String),
    #[error("no price data for {0}")]
    MissingPriceData(String),

    #[error("need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("degenerate volatility")]
    DegenerateVolatility,
    #[error("no downside")]
    NoDownside,
    #[error("non-positive high-water mark")]
    NonPositiveHwm,
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    #[error("invalid scenario `{0}`")]
    InvalidScenario(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("http: {0}")]
    Http(String),
    #[error("offline mode, no fixture for {0}")]
    OfflineNoFixture(String),
    #[error("empty response range for {0}")]
    EmptyRange(String),

    #[error("empty admissible grid")]
    EmptyGrid,
    #[error("bounds admit no valid config")]
    InfeasibleBounds,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            TooShort { .. } | DegenerateVolatility | NoDownside | NonPositiveHwm => {
                ErrorKind::Numeric
            }
            InvalidScenario(_) | InvalidArgument(_) | InvalidConfig(_) | EmptyGrid
            | InfeasibleBounds => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }
}
