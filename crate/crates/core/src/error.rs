use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("PLY error at byte {offset}: {message}")]
    Ply { offset: u64, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("degenerate bounding box (zero diagonal)")]
    DegenerateBbox,

    #[error("k out of range: requested {requested}, available {available}")]
    KOutOfRange { requested: usize, available: usize },

    #[error("interpolation capacity exhausted: {0}")]
    Capacity(String),

    #[error("insufficient neighbors: need {needed}, have {available}")]
    InsufficientNeighbors { needed: usize, available: usize },

    #[error("LUT error: {0}")]
    Lut(String),

    #[error("LUT size overflow: b^n x 6 bytes does not fit (n={rf_size}, b={bins})")]
    LutOverflow { rf_size: u32, bins: u64 },

    #[error("LUT file size mismatch: header implies {expected} bytes, found {found}")]
    LutSizeMismatch { expected: u64, found: u64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("checksum mismatch: expected {expected:#010x}, computed {computed:#010x}")]
    Checksum { expected: u32, computed: u32 },

    #[error("server returned status {status}: {message}")]
    Remote { status: u8, message: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("trace error: {0}")]
    Trace(String),

    #[error("ABR error: {0}")]
    Abr(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn ply(offset: u64, message: impl Into<String>) -> Self {
        Error::Ply {
            offset,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
