//! Functional models of the Unnormed Softmax subunits (IntMax, Power of Two,
//! Reduction) and the Normalization unit.
//!
//! The units are written against the [`Datapath`] trait so the same control
//! flow can run on the bit-accurate fixed-point datapath ([`FixedDatapath`])
//! or on exact arithmetic (see [`crate::exact`]).

use std::fmt::Debug;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpw::{self, LpwTable};
use crate::qnum::{self, QFormat, QValue};

/// The formats of the fixed-point datapath. Defaults are the 8-bit-in,
/// 8-bit-out configuration: Q(6,2) / Q(1,15) / Q(10,6) / Q(1,7) / Q(1,7).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formats {
    pub input: QFormat,
    pub unnormed: QFormat,
    pub pow_sum: QFormat,
    pub recip: QFormat,
    pub output: QFormat,
}

impl Default for Formats {
    fn default() -> Self {
        Formats {
            input: QFormat::INPUT,
            unnormed: QFormat::UNNORMED,
            pow_sum: QFormat::POW_SUM,
            recip: QFormat::RECIP,
            output: QFormat::OUTPUT,
        }
    }
}

/// Online-normalization state of one row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowState<S> {
    Empty,
    Active { running_max: i64, running_sum: S },
}

impl<S> RowState<S> {
    pub fn is_initialized(&self) -> bool {
        matches!(self, RowState::Active { .. })
    }

    pub fn running_max(&self) -> Option<i64> {
        match self {
            RowState::Active { running_max, .. } => Some(*running_max),
            RowState::Empty => None,
        }
    }

    pub fn running_sum(&self) -> Option<&S> {
        match self {
            RowState::Active { running_sum, .. } => Some(running_sum),
            RowState::Empty => None,
        }
    }
}

/// Unnormed values of one slice and the integer max they were exponentiated against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceOutput<U> {
    pub unnormed: Vec<U>,
    pub max_used: i64,
}

/// Arithmetic behind the units. Implementations must be pure.
pub trait Datapath: Sync {
    type Unnormed: Clone + Debug + Send + Sync;
    type Sum: Clone + Debug + PartialEq + Send + Sync;
    type Recip: Clone + Debug;
    type Output: Clone + Debug + Send + Sync;

    fn input_format(&self) -> QFormat;

    /// `2^(x - reference)` for `x <= reference`.
    fn pow2(&self, x: QValue, reference: i64) -> Result<Self::Unnormed>;

    /// Pairwise summation of one slice into the denominator representation.
    fn local_sum(&self, terms: &[Self::Unnormed]) -> Self::Sum;

    fn shift_sum(&self, sum: &Self::Sum, k: u64) -> Self::Sum;

    fn add_sums(&self, a: &Self::Sum, b: &Self::Sum) -> Self::Sum;

    fn reciprocal(&self, denominator: &Self::Sum) -> Result<Self::Recip>;

    /// Renormalize one unnormed value by `renorm` and divide it by the denominator.
    fn scale(&self, value: &Self::Unnormed, renorm: u64, recip: &Self::Recip) -> Self::Output;

    /// Whether dividing by this denominator reads the reciprocal slope LUT.
    fn reciprocal_reads_slope(&self, _denominator: &Self::Sum) -> bool {
        false
    }

    /// Whether `scale` ends with an exponent shift.
    fn scale_shifts(&self, _recip: &Self::Recip) -> bool {
        false
    }
}

/// Balanced pairwise reduction, pairing left to right at every level.
pub fn pairwise_sum<T: Clone>(items: &[T], add: impl Fn(&T, &T) -> T) -> Option<T> {
    if items.is_empty() {
        return None;
    }
    let mut level: Vec<T> = items.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [a, b] => add(a, b),
                [a] => a.clone(),
                _ => unreachable!(),
            })
            .collect();
    }
    level.pop()
}

fn ceil_log2(n: usize) -> u32 {
    n.max(1).next_power_of_two().trailing_zeros()
}

/// Integer max of the element-wise ceilings.
pub fn intmax_slice(xs: &[QValue]) -> Result<i64> {
    xs.iter()
        .map(|&x| qnum::ceil_to_int(x))
        .max()
        .ok_or(Error::EmptySlice)
}

/// Split `x - reference` (in the input format of `x`) into its integer part and
/// a fraction in `[0, 1)`.
fn split_delta(x: QValue, reference: i64) -> Result<(i64, QValue)> {
    let fmt = x.format();
    let n = fmt.frac_bits();
    let delta = x.raw() as i128 - ((reference as i128) << n);
    if delta > 0 {
        return Err(Error::ExponentAboveMax {
            x: x.to_real(),
            max: reference,
        });
    }
    let int_part = delta >> n;
    let frac_raw = (delta - (int_part << n)) as i64;
    let frac = QValue::from_raw(frac_raw, QFormat::new(1, n, false)?)?;
    Ok((int_part.max(i64::MIN as i128) as i64, frac))
}

/// Whether the power-of-two unit reads its slope LUT for this input.
pub fn pow2_reads_slope(x: QValue, reference: i64) -> bool {
    split_delta(x, reference)
        .map(|(_, frac)| FIXED.pow2_table.uses_slope(frac))
        .unwrap_or(false)
}

/// Leading-one normalization: `d = (1 + frac) * 2^e`.
fn mantissa_split(d: QValue) -> Result<(QValue, i64)> {
    let raw = d.raw();
    if raw <= 0 {
        return Err(Error::VanishedDenominator);
    }
    let p = 63 - raw.leading_zeros();
    let e = p as i64 - d.format().frac_bits() as i64;
    let frac = QValue::from_raw(raw - (1i64 << p), QFormat::new(1, p, false)?)?;
    Ok((frac, e))
}

/// Bit-accurate fixed-point datapath.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDatapath {
    formats: Formats,
    pow2_table: LpwTable,
    recip_table: LpwTable,
}

/// Reciprocal of a denominator split into mantissa `1/u` and exponent `e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedRecip {
    pub mantissa: QValue,
    pub exponent: i64,
}

static FIXED: LazyLock<FixedDatapath> = LazyLock::new(FixedDatapath::default);

impl Default for FixedDatapath {
    fn default() -> Self {
        FixedDatapath::new(Formats::default())
    }
}

impl FixedDatapath {
    pub fn new(formats: Formats) -> Self {
        FixedDatapath {
            formats,
            pow2_table: lpw::build_pow2_table(),
            recip_table: lpw::build_recip_table(),
        }
    }

    pub fn formats(&self) -> &Formats {
        &self.formats
    }

    pub fn pow2_table(&self) -> &LpwTable {
        &self.pow2_table
    }

    pub fn recip_table(&self) -> &LpwTable {
        &self.recip_table
    }

    fn tree_format(&self, terms: usize) -> QFormat {
        self.formats.unnormed.widened(ceil_log2(terms))
    }
}

impl Datapath for FixedDatapath {
    type Unnormed = QValue;
    type Sum = QValue;
    type Recip = FixedRecip;
    type Output = QValue;

    fn input_format(&self) -> QFormat {
        self.formats.input
    }

    fn pow2(&self, x: QValue, reference: i64) -> Result<QValue> {
        let (int_part, frac) = split_delta(x, reference)?;
        let mantissa = lpw::eval_lpw(&self.pow2_table, frac)?;
        let widened = qnum::rescale(mantissa, self.formats.unnormed);
        Ok(qnum::shr(widened, int_part.unsigned_abs()))
    }

    /// The tree adds full-precision terms exactly; the slice sum is narrowed
    /// into the denominator format once, by floor truncation.
    fn local_sum(&self, terms: &[QValue]) -> QValue {
        let acc = self.tree_format(terms.len());
        let widened: Vec<QValue> = terms.iter().map(|&t| qnum::rescale(t, acc)).collect();
        let sum = pairwise_sum(&widened, |a, b| qnum::add_sat(*a, *b).expect("same format"))
            .unwrap_or_else(|| QValue::zero(acc));
        qnum::rescale(sum, self.formats.pow_sum)
    }

    fn shift_sum(&self, sum: &QValue, k: u64) -> QValue {
        qnum::shr(*sum, k)
    }

    fn add_sums(&self, a: &QValue, b: &QValue) -> QValue {
        qnum::add_sat(*a, *b).expect("denominators share a format")
    }

    fn reciprocal(&self, denominator: &QValue) -> Result<FixedRecip> {
        let (frac, exponent) = mantissa_split(*denominator)?;
        let inv = lpw::eval_lpw(&self.recip_table, frac)?;
        Ok(FixedRecip {
            mantissa: qnum::rescale(inv, self.formats.recip),
            exponent,
        })
    }

    fn scale(&self, value: &QValue, renorm: u64, recip: &FixedRecip) -> QValue {
        let renormed = qnum::shr(*value, renorm);
        let product = qnum::mul(renormed, recip.mantissa, self.formats.output);
        if recip.exponent >= 0 {
            qnum::shr(product, recip.exponent as u64)
        } else {
            qnum::shift_left_sat(product, recip.exponent.unsigned_abs().min(u32::MAX as u64) as u32)
        }
    }

    fn reciprocal_reads_slope(&self, denominator: &QValue) -> bool {
        mantissa_split(*denominator)
            .map(|(frac, _)| self.recip_table.uses_slope(frac))
            .unwrap_or(false)
    }

    fn scale_shifts(&self, recip: &FixedRecip) -> bool {
        recip.exponent != 0
    }
}

/// Power-of-two unit on the default formats: `2^(x - max_int)` in Q(1,15).
pub fn pow2_q(x: QValue, max_int: i64) -> Result<QValue> {
    FIXED.pow2(x, max_int)
}

/// Combine two active states: the side with the smaller max is shifted right
/// by the max difference before the saturating add.
pub fn combine<D: Datapath>(
    dp: &D,
    (max_a, sum_a): (i64, &D::Sum),
    (max_b, sum_b): (i64, &D::Sum),
) -> (i64, D::Sum) {
    let new_max = max_a.max(max_b);
    let a = dp.shift_sum(sum_a, new_max.abs_diff(max_a));
    let b = dp.shift_sum(sum_b, new_max.abs_diff(max_b));
    (new_max, dp.add_sums(&a, &b))
}

/// Reduction unit: sum the slice and fold it into the running state.
pub fn reduce_slice<D: Datapath>(
    dp: &D,
    slice_vals: Vec<D::Unnormed>,
    local_max: i64,
    state: &RowState<D::Sum>,
) -> (RowState<D::Sum>, SliceOutput<D::Unnormed>) {
    let local_sum = dp.local_sum(&slice_vals);
    let next = match state {
        RowState::Empty => RowState::Active {
            running_max: local_max,
            running_sum: local_sum,
        },
        RowState::Active {
            running_max,
            running_sum,
        } => {
            let (running_max, running_sum) =
                combine(dp, (*running_max, running_sum), (local_max, &local_sum));
            RowState::Active {
                running_max,
                running_sum,
            }
        }
    };
    (
        next,
        SliceOutput {
            unnormed: slice_vals,
            max_used: local_max,
        },
    )
}

/// Normalization unit: renormalize every numerator to the row max with a
/// shift, then multiply by the reciprocal of the denominator.
pub fn normalize<D: Datapath>(
    dp: &D,
    slices: &[SliceOutput<D::Unnormed>],
    state: &RowState<D::Sum>,
) -> Result<Vec<D::Output>> {
    let RowState::Active {
        running_max,
        running_sum,
    } = state
    else {
        return Err(Error::Uninitialized);
    };
    let recip = dp.reciprocal(running_sum)?;
    let mut out = Vec::with_capacity(slices.iter().map(|s| s.unnormed.len()).sum());
    for slice in slices {
        if slice.max_used > *running_max {
            return Err(Error::SliceAboveRowMax {
                slice_max: slice.max_used,
                row_max: *running_max,
            });
        }
        let renorm = running_max.abs_diff(slice.max_used);
        out.extend(slice.unnormed.iter().map(|v| dp.scale(v, renorm, &recip)));
    }
    Ok(out)
}
