//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad class of an error, used by the command-line front end to pick an
/// exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    // ---- ingestion ----
    #[error("missing cell for country {country}, week {week}")]
    MissingCell { country: String, week: String },
    #[error("non-positive or non-finite rate {value} for country {country}, age {age}, week {week}")]
    NonPositiveRate {
        country: String,
        age: String,
        week: String,
        value: f64,
    },
    #[error("year {year} has {count} weeks in the selected range, expected 52")]
    RaggedYear { year: i32, count: usize },
    #[error("unknown country {0}")]
    UnknownCountry(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    InvalidData(String),

    // ---- model fitting ----
    #[error("degenerate age loading: sum of the leading right singular vector is {sum:e}")]
    DegenerateLoading { sum: f64 },
    #[error("panel shapes differ: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{0}")]
    InvalidInput(String),
    #[error("{which} fit failed: {source}")]
    SubFit {
        which: String,
        #[source]
        source: Box<Error>,
    },
    #[error("forecast paths do not match the fit: {0}")]
    PathLengthMismatch(String),
    #[error("stage predictor is identically zero")]
    ZeroPredictor,
    #[error("boosting stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    // ---- diagnostics / time series ----
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("series of length {len} is too short (need more than {needed})")]
    InsufficientLength { len: usize, needed: usize },
    #[error("series of length {len} is too short (need at least {needed})")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("harmonic design is rank deficient ({distinct} distinct week fractions)")]
    RankDeficient { distinct: usize },

    // ---- clustering ----
    #[error("cannot form {k} clusters from {n} points")]
    EmptyClusterUnrecoverable { k: usize, n: usize },
    #[error("inertia curve has {0} points, need at least 3")]
    CurveTooShort(usize),

    // ---- backtest / artifacts ----
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("fold {fold}, group {group}: {source}")]
    Fold {
        fold: usize,
        group: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("corrupt model artifact: {0}")]
    CorruptArtifact(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::UnknownCountry(_) => ErrorKind::Config,
            Error::MissingCell { .. }
            | Error::NonPositiveRate { .. }
            | Error::RaggedYear { .. }
            | Error::Csv(_)
            | Error::Io(_)
            | Error::InvalidData(_)
            | Error::InsufficientData(_)
            | Error::CorruptArtifact(_) => ErrorKind::Data,
            Error::SubFit { source, .. } | Error::Stage { source, .. } | Error::Fold { source, .. } => {
                source.kind()
            }
            _ => ErrorKind::Numeric,
        }
    }

    pub(crate) fn at_stage(self, stage: usize) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_subfit(self, which: impl Into<String>) -> Error {
        Error::SubFit {
            which: which.into(),
            source: Box::new(self),
        }
    }
}
