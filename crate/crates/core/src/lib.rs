//! Bit-accurate functional model of a base-2, fixed-point softmax with
//! online normalization, plus a double-precision reference and an
//! error-analysis harness.

pub mod error;
pub mod exact;
pub mod harness;
pub mod lpw;
pub mod matrix;
pub mod oracle;
pub mod qnum;
pub mod streaming;
pub mod units;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use qnum::{QFormat, QValue};
pub use streaming::{softermax_matrix, softermax_row, EngineConfig, Mode, RunStats};
