use thiserror::Error;

use crate::qnum::QFormat;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value")]
    NonFinite,
    #[error("invalid format Q({int_bits},{frac_bits}): {reason}")]
    InvalidFormat {
        int_bits: u32,
        frac_bits: u32,
        reason: &'static str,
    },
    #[error("raw value {raw} outside the range of {format}")]
    RawOutOfRange { raw: i64, format: QFormat },
    #[error("format mismatch: {0} vs {1}")]
    FormatMismatch(QFormat, QFormat),
    #[error("negative shift amount {0}")]
    NegativeShift(i64),
    #[error("LPW domain violation: {0} not in [0,1)")]
    LpwDomain(f64),
    #[error("empty slice")]
    EmptySlice,
    #[error("exponent above running max: x = {x}, max = {max}")]
    ExponentAboveMax { x: f64, max: i64 },
    #[error("vanished denominator")]
    VanishedDenominator,
    #[error("row state not initialized")]
    Uninitialized,
    #[error("slice max {slice_max} exceeds row max {row_max}")]
    SliceAboveRowMax { slice_max: i64, row_max: i64 },
    #[error("empty row")]
    EmptyRow,
    #[error("empty matrix")]
    EmptyMatrix,
    #[error("ragged matrix: row {row} has {len} columns, expected {expected}")]
    RaggedMatrix {
        row: usize,
        len: usize,
        expected: usize,
    },
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("lane width must be positive")]
    ZeroLaneWidth,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
