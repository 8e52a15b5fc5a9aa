use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the pipeline can report.
///
/// Variants are grouped by the stage that raises them; `Error::kind` maps
/// them onto the coarse categories used for process exit codes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // io and parsing
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed row {line}: {message}")]
    MalformedRow { line: usize, message: String },
    #[error("duplicate timestamp {timestamp} at row {line}")]
    DuplicateTimestamp { line: usize, timestamp: i64 },
    #[error("timestamp {timestamp} at row {line} is earlier than its predecessor")]
    NonMonotonicTimestamp { line: usize, timestamp: i64 },
    #[error("timestamps are not uniformly spaced: gap of {found} s at index {index}, expected {expected} s")]
    IrregularSampling { index: usize, found: i64, expected: i64 },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("serialization error: {0}")]
    Serialization(String),

    // preprocessing
    #[error("gap of {len} samples at index {start} in `{variable}` exceeds max_gap {max_gap}")]
    GapTooLong { variable: String, start: usize, len: usize, max_gap: usize },
    #[error("variable `{0}` has no observed values")]
    AllMissing(String),
    #[error("window {window} must be smaller than the series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("invalid window {0}: must be odd and at least the stated minimum")]
    InvalidWindow(usize),
    #[error("variable `{0}` is constant over the fit range")]
    DegenerateVariance(String),
    #[error("invalid range {start}..{end} for length {len}")]
    InvalidRange { start: usize, end: usize, len: usize },
    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),
    #[error("split `{part}` has {len} samples, fewer than the required {min_len}")]
    EmptySplit { part: &'static str, len: usize, min_len: usize },

    // causal screening
    #[error("need at least 5 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("paired vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("design matrix is rank deficient")]
    SingularDesign,
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("invalid test specification: {0}")]
    InvalidTestSpec(String),

    // delay inference
    #[error("window at lag {lag} has zero variance")]
    DegenerateWindow { lag: usize },
    #[error("series of length {len} too short for max_lag {max_lag}")]
    SeriesTooShort { len: usize, max_lag: usize },
    #[error("lag {lag} is not smaller than the series length {len}")]
    LagExceedsLength { lag: usize, len: usize },
    #[error("augmented column `{0}` already exists")]
    ColumnCollision(String),

    // models
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("history is empty")]
    EmptyHistory,
    #[error("training diverged at step {0}")]
    Diverged(usize),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    // evaluation
    #[error("input is empty")]
    EmptyInput,
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    // synthetic data
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("VAR system is unstable (spectral radius {0:.6})")]
    UnstableSystem(f64),

    // pipeline
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: String, source: Box<Error> },
}

/// Coarse error category, used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Stage,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::InvalidTestSpec(_) => {
                ErrorKind::Config
            }
            Error::Io { .. }
            | Error::MalformedRow { .. }
            | Error::DuplicateTimestamp { .. }
            | Error::NonMonotonicTimestamp { .. }
            | Error::IrregularSampling { .. }
            | Error::MissingColumn(_)
            | Error::UnknownVariable(_)
            | Error::Serialization(_)
            | Error::Checkpoint(_) => ErrorKind::Data,
            // data problems surfacing inside a stage keep their category
            Error::Stage { source, .. } => match source.kind() {
                ErrorKind::Data => ErrorKind::Data,
                _ => ErrorKind::Stage,
            },
            _ => ErrorKind::Stage,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), message: err.to_string() }
    }

    pub(crate) fn at_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
