use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated pixel data: expected {expected} samples, found {found}")]
    TruncatedPixels { expected: usize, found: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("line {line}: invalid label {value:?}")]
    InvalidLabel { line: usize, value: String },
    #[error("line {line}: malformed box {value:?}")]
    MalformedBox { line: usize, value: String },
    #[error("line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("box {0:?} lies outside the image")]
    BoxOutsideImage([i64; 4]),
    #[error("invalid part location: {0}")]
    InvalidLocation(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("location {0:?} is not aligned to the feature grid")]
    NotGridAligned([f64; 4]),
    #[error("no box on this grid spans {min_cells} cells")]
    ImpossibleSpan { min_cells: usize },

    #[error("image {width}x{height} is smaller than the smallest patch ({patch})")]
    ImageTooSmall { width: usize, height: usize, patch: usize },
    #[error("empty descriptor set")]
    NoDescriptors,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("region contains no descriptors; cannot initialize a part from it")]
    DegenerateRegion,

    #[error("every part is excluded; nothing to select")]
    EmptySelection,
    #[error("no feasible subset of {0} parts")]
    Infeasible(usize),
    #[error("model has {0} parts; exhaustive scoring supports at most {max}", max = crate::model::EXACT_MAX_PARTS)]
    TooManyParts(usize),
    #[error("pruning would remove every part")]
    PruneAll,

    #[error("unknown format: {0}")]
    UnknownFormat(String),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training set has no {0} examples")]
    EmptyClass(&'static str),
    #[error("no positive examples to rank")]
    NoPositives,
    #[error("mean of an empty set")]
    EmptyInput,
    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
