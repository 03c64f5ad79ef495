use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Model,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Model => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown pcap magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("capture shorter than the 24-byte global header ({0} bytes)")]
    TruncatedHeader(usize),
    #[error("record {index} declares {declared} captured bytes but only {available} remain")]
    TruncatedRecord {
        index: usize,
        declared: usize,
        available: usize,
    },
    #[error("malformed packet: {0}")]
    MalformedPacket(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("bad network shape: {0}")]
    BadShape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("too few rows: have {rows}, need at least {needed}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("mixture component {component} collapsed (weight {weight:e})")]
    DegenerateComponent { component: usize, weight: f64 },
    #[error("alignment error: {0}")]
    AlignmentError(String),
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("unknown kind `{0}`")]
    UnknownKind(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("bad archetype profile: {0}")]
    BadProfile(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("artifact format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt artifact: {0}")]
    Corrupt(String),
    #[error("no ground-truth label for flow `{0}`")]
    MissingLabel(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Stage { source, .. } => source.category(),
            Error::Config(_) | Error::UnknownKind(_) | Error::InvalidParams(_) | Error::BadProfile(_) => {
                ErrorCategory::Config
            }
            Error::BadShape(_)
            | Error::NonFinite(_)
            | Error::DegenerateComponent { .. }
            | Error::VersionMismatch { .. }
            | Error::Corrupt(_) => ErrorCategory::Model,
            _ => ErrorCategory::Data,
        }
    }

    /// Short machine-friendly name of the innermost error.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BadMagic(_) => "BadMagic",
            Error::TruncatedHeader(_) => "TruncatedHeader",
            Error::TruncatedRecord { .. } => "TruncatedRecord",
            Error::MalformedPacket(_) => "MalformedPacket",
            Error::InvalidParams(_) => "InvalidParams",
            Error::EmptyInput(_) => "EmptyInput",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::BadShape(_) => "BadShape",
            Error::NonFinite(_) => "NonFinite",
            Error::TooFewRows { .. } => "TooFewRows",
            Error::DegenerateComponent { .. } => "DegenerateComponent",
            Error::AlignmentError(_) => "AlignmentError",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::SingleClass => "SingleClass",
            Error::UnknownKind(_) => "UnknownKind",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::BadProfile(_) => "BadProfile",
            Error::Config(_) => "Config",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::Corrupt(_) => "Corrupt",
            Error::MissingLabel(_) => "MissingLabel",
            Error::Parse(_) => "Parse",
            Error::Stage { source, .. } => source.kind(),
            Error::Io(_) => "Io",
        }
    }

    /// Name of the pipeline stage that failed, if the error was tagged with one.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

/// Tags a `Result` with the pipeline stage it came from.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
