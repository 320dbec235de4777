//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // --- file formats ---
    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    MagicMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    TruncatedFile {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("trailing bytes in {path}: expected {expected} bytes, found {found}")]
    TrailingBytes {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at row {row}, col {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("matrix has zero {0}")]
    DimensionZero(&'static str),
    #[error("row {row} flagged normalized but has norm {norm}")]
    NormalizationViolated { row: usize, norm: f64 },
    #[error("row {index} is all zeros")]
    ZeroRow { index: usize },
    #[error("duplicate noun name {0:?}")]
    DuplicateName(String),
    #[error("sidecar mismatch: {0}")]
    SidecarMismatch(String),
    #[error("label {value} at index {index} out of range for {num_classes} classes")]
    LabelOutOfRange {
        index: usize,
        value: usize,
        num_classes: usize,
    },
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON failure on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("PNG encoding failed: {0}")]
    Png(String),

    // --- numerics ---
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("requested k = {k} exceeds {rows} rows")]
    KTooLarge { k: usize, rows: usize },
    #[error("k_hat = {k_hat} must be below sample count {n}")]
    KHatTooLarge { k_hat: usize, n: usize },
    #[error("contingency matrix is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },
    #[error("Cholesky factorization failed at pivot {pivot} (value {value})")]
    FactorizationFailure { pivot: usize, value: f64 },
    #[error("every fine center received zero nouns")]
    EmptyCandidateSet,
    #[error("no sample reaches consistency threshold {tau}")]
    EmptySelection { tau: f64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("missing view: {0}")]
    MissingView(String),
    #[error("zero-norm feature vector")]
    ZeroVector,
    #[error("training diverged at step {step}: total loss {loss}")]
    DivergenceDetected { step: usize, loss: f64 },
    #[error("bad synthetic dimensions: {0}")]
    BadDims(String),

    // --- pipeline ---
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Strips any stage annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code for the CLI: 2 config error, 3 stage failure,
    /// 4 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) => 2,
            Error::InvariantViolation(_)
            | Error::NonFiniteValue { .. }
            | Error::NormalizationViolated { .. }
            | Error::DuplicateName(_)
            | Error::SidecarMismatch(_)
            | Error::LabelOutOfRange { .. } => 4,
            _ => 3,
        }
    }
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        })
    }
}
