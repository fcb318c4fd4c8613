//! Saturating fixed-point arithmetic in parameterized `Q(int, frac)` formats.
//!
//! A [`QValue`] is a scaled integer together with its [`QFormat`]. Every
//! producing operation saturates into the destination range, and every
//! narrowing step (shifts, product rescaling) truncates toward negative
//! infinity, the way a plain hardware shifter does.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-point format. `int_bits` includes the sign bit for signed formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QFormat {
    int_bits: u32,
    frac_bits: u32,
    signed: bool,
}

impl QFormat {
    /// Attention score input, Q(6,2) signed.
    pub const INPUT: QFormat = QFormat::unchecked(6, 2, true);
    /// Unnormed softmax lanes, Q(1,15) unsigned.
    pub const UNNORMED: QFormat = QFormat::unchecked(1, 15, false);
    /// Running denominator, Q(10,6) unsigned.
    pub const POW_SUM: QFormat = QFormat::unchecked(10, 6, false);
    /// Reciprocal mantissa, Q(1,7) unsigned.
    pub const RECIP: QFormat = QFormat::unchecked(1, 7, false);
    /// Softmax output, Q(1,7) unsigned.
    pub const OUTPUT: QFormat = QFormat::unchecked(1, 7, false);
    /// LPW slope entries, Q(1,15) signed.
    pub const SLOPE: QFormat = QFormat::unchecked(1, 15, true);

    pub(crate) const fn unchecked(int_bits: u32, frac_bits: u32, signed: bool) -> Self {
        QFormat {
            int_bits,
            frac_bits,
            signed,
        }
    }

    pub fn new(int_bits: u32, frac_bits: u32, signed: bool) -> Result<Self> {
        let invalid = |reason| Error::InvalidFormat {
            int_bits,
            frac_bits,
            reason,
        };
        if int_bits < 1 {
            return Err(invalid("int_bits must be at least 1"));
        }
        if int_bits + frac_bits > 32 {
            return Err(invalid("total width exceeds 32 bits"));
        }
        Ok(QFormat::unchecked(int_bits, frac_bits, signed))
    }

    pub fn signed(int_bits: u32, frac_bits: u32) -> Result<Self> {
        QFormat::new(int_bits, frac_bits, true)
    }

    pub fn unsigned(int_bits: u32, frac_bits: u32) -> Result<Self> {
        QFormat::new(int_bits, frac_bits, false)
    }

    pub fn int_bits(self) -> u32 {
        self.int_bits
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    pub fn is_signed(self) -> bool {
        self.signed
    }

    pub fn width(self) -> u32 {
        self.int_bits + self.frac_bits
    }

    pub fn raw_min(self) -> i64 {
        if self.signed {
            -(1i64 << (self.width() - 1))
        } else {
            0
        }
    }

    pub fn raw_max(self) -> i64 {
        if self.signed {
            (1i64 << (self.width() - 1)) - 1
        } else {
            (1i64 << self.width()) - 1
        }
    }

    pub fn ulp(self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn min_value(self) -> f64 {
        self.raw_min() as f64 * self.ulp()
    }

    pub fn max_value(self) -> f64 {
        self.raw_max() as f64 * self.ulp()
    }

    /// Same fractional precision, at least `extra` more integer bits, capped at 32 total.
    pub(crate) fn widened(self, extra: u32) -> Self {
        let int_bits = (self.int_bits + extra).min(32 - self.frac_bits).max(1);
        QFormat::unchecked(int_bits, self.frac_bits, self.signed)
    }

    fn saturate(self, raw: i128) -> i64 {
        raw.clamp(self.raw_min() as i128, self.raw_max() as i128) as i64
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = if self.signed { "" } else { "u" };
        write!(f, "{prefix}Q({},{})", self.int_bits, self.frac_bits)
    }
}

/// A fixed-point value: `raw / 2^frac_bits`, with `raw` inside the format range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QValue {
    raw: i64,
    format: QFormat,
}

impl QValue {
    pub fn from_raw(raw: i64, format: QFormat) -> Result<Self> {
        if raw < format.raw_min() || raw > format.raw_max() {
            return Err(Error::RawOutOfRange { raw, format });
        }
        Ok(QValue { raw, format })
    }

    pub fn saturating_from_raw(raw: i128, format: QFormat) -> Self {
        QValue {
            raw: format.saturate(raw),
            format,
        }
    }

    pub fn zero(format: QFormat) -> Self {
        QValue { raw: 0, format }
    }

    /// 1.0, or the format maximum when 1.0 is not representable.
    pub fn one(format: QFormat) -> Self {
        QValue::saturating_from_raw(1i128 << format.frac_bits, format)
    }

    pub fn raw(self) -> i64 {
        self.raw
    }

    pub fn format(self) -> QFormat {
        self.format
    }

    pub fn to_real(self) -> f64 {
        self.raw as f64 * self.format.ulp()
    }

    pub fn is_max(self) -> bool {
        self.raw == self.format.raw_max()
    }
}

impl fmt::Display for QValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} raw {})", self.to_real(), self.format, self.raw)
    }
}

/// Nearest representable value, ties to even on the raw integer, saturating.
pub fn quantize(value: f64, format: QFormat) -> Result<QValue> {
    if !value.is_finite() {
        return Err(Error::NonFinite);
    }
    // Scaling by a power of two is exact for every finite double that does not overflow.
    let scaled = (value * (format.frac_bits as f64).exp2()).round_ties_even();
    let raw = scaled.clamp(format.raw_min() as f64, format.raw_max() as f64) as i64;
    Ok(QValue { raw, format })
}

pub fn add_sat(a: QValue, b: QValue) -> Result<QValue> {
    if a.format != b.format {
        return Err(Error::FormatMismatch(a.format, b.format));
    }
    Ok(QValue::saturating_from_raw(
        a.raw as i128 + b.raw as i128,
        a.format,
    ))
}

/// Full-width product, floor-rescaled into `out`, saturating.
pub fn mul(a: QValue, b: QValue, out: QFormat) -> QValue {
    let product = a.raw as i128 * b.raw as i128;
    let shift = a.format.frac_bits as i64 + b.format.frac_bits as i64 - out.frac_bits as i64;
    let rescaled = if shift >= 0 {
        product >> shift.min(127)
    } else {
        // |shift| <= 32 and |product| < 2^64, so this cannot overflow.
        product << (-shift)
    };
    QValue::saturating_from_raw(rescaled, out)
}

/// Arithmetic right shift with floor semantics. Negative amounts are rejected.
pub fn shift_right(a: QValue, k: i64) -> Result<QValue> {
    if k < 0 {
        return Err(Error::NegativeShift(k));
    }
    Ok(shr(a, k as u64))
}

pub(crate) fn shr(a: QValue, k: u64) -> QValue {
    QValue {
        raw: a.raw >> k.min(63),
        format: a.format,
    }
}

pub fn shift_left_sat(a: QValue, k: u32) -> QValue {
    if a.raw == 0 {
        return a;
    }
    let shifted = if k >= 64 {
        if a.raw > 0 {
            i128::MAX
        } else {
            i128::MIN
        }
    } else {
        (a.raw as i128) << k
    };
    QValue::saturating_from_raw(shifted, a.format)
}

/// Smallest integer not below the value.
pub fn ceil_to_int(a: QValue) -> i64 {
    -((-a.raw) >> a.format.frac_bits)
}

/// Largest integer not above the value.
pub fn floor_to_int(a: QValue) -> i64 {
    a.raw >> a.format.frac_bits
}

/// Re-express `a` in `out`: floor when dropping fractional bits, saturating.
pub fn rescale(a: QValue, out: QFormat) -> QValue {
    let from = a.format.frac_bits as i64;
    let to = out.frac_bits as i64;
    let raw = a.raw as i128;
    let moved = if from >= to {
        raw >> (from - to)
    } else {
        raw << (to - from)
    };
    QValue::saturating_from_raw(moved, out)
}
