//! Exact datapath: the same unit structure as the fixed-point model, carried
//! out on dyadic rationals so nothing is ever rounded after exponentiation.
//!
//! The fractional power `2^f` is the correctly scaled `f64` value of
//! `libm::exp2(f)`, taken as an exact dyadic rational. Every later step
//! (renormalizing shifts, tree sums, the final division) is exact, so two
//! evaluation orders that are algebraically equal produce equal results.

use std::cmp::Ordering;
use std::ops::Add;

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::qnum::{QFormat, QValue};
use crate::units::{pairwise_sum, Datapath};

/// `mantissa * 2^exponent`, kept canonical (odd mantissa, or zero with exponent 0).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Dyadic {
    mantissa: BigInt,
    exponent: i64,
}

impl Dyadic {
    pub fn zero() -> Self {
        Dyadic {
            mantissa: BigInt::zero(),
            exponent: 0,
        }
    }

    pub fn new(mantissa: BigInt, exponent: i64) -> Self {
        if mantissa.is_zero() {
            return Dyadic::zero();
        }
        let tz = mantissa.trailing_zeros().unwrap_or(0);
        Dyadic {
            mantissa: mantissa >> tz,
            exponent: exponent + tz as i64,
        }
    }

    pub fn from_f64(v: f64) -> Result<Self> {
        if !v.is_finite() {
            return Err(Error::NonFinite);
        }
        if v == 0.0 {
            return Ok(Dyadic::zero());
        }
        let bits = v.to_bits();
        let sign = if bits >> 63 == 1 { -1 } else { 1 };
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let fraction = bits & ((1u64 << 52) - 1);
        let (mantissa, exponent) = if biased == 0 {
            (fraction, -1074)
        } else {
            (fraction | (1u64 << 52), biased - 1075)
        };
        Ok(Dyadic::new(BigInt::from(mantissa) * sign, exponent))
    }

    pub fn from_qvalue(v: QValue) -> Self {
        Dyadic::new(BigInt::from(v.raw()), -(v.format().frac_bits() as i64))
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.mantissa.is_negative()
    }

    /// Exact division by `2^k`.
    pub fn shr(&self, k: u64) -> Self {
        if self.is_zero() {
            return Dyadic::zero();
        }
        Dyadic {
            mantissa: self.mantissa.clone(),
            exponent: self.exponent - k as i64,
        }
    }

    pub fn mul(&self, other: &Dyadic) -> Self {
        Dyadic::new(&self.mantissa * &other.mantissa, self.exponent + other.exponent)
    }

    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        // Keep the top 64 bits so the mantissa conversion cannot overflow.
        let bits = self.mantissa.bits() as i64;
        let drop = (bits - 64).max(0);
        let top = (&self.mantissa >> drop as usize).to_f64().unwrap_or(f64::NAN);
        scale_pow2(top, self.exponent + drop)
    }
}

fn scale_pow2(v: f64, e: i64) -> f64 {
    libm::ldexp(v, e.clamp(i32::MIN as i64, i32::MAX as i64) as i32)
}

impl Add for &Dyadic {
    type Output = Dyadic;

    fn add(self, other: &Dyadic) -> Dyadic {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        let e = self.exponent.min(other.exponent);
        let a = &self.mantissa << (self.exponent - e) as usize;
        let b = &other.mantissa << (other.exponent - e) as usize;
        Dyadic::new(a + b, e)
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let e = self.exponent.min(other.exponent);
        let a = &self.mantissa << (self.exponent - e) as usize;
        let b = &other.mantissa << (other.exponent - e) as usize;
        a.cmp(&b)
    }
}

/// An exact softmax output `numerator / denominator`.
#[derive(Debug, Clone)]
pub struct ExactOutput {
    pub numerator: Dyadic,
    pub denominator: Dyadic,
}

impl ExactOutput {
    pub fn to_f64(&self) -> f64 {
        // Both sides are brought to at most 64 significant bits before the
        // division, which keeps the quotient accurate to a few ulps.
        let n = &self.numerator;
        let d = &self.denominator;
        if n.is_zero() {
            return 0.0;
        }
        let n_bits = n.mantissa.bits() as i64;
        let d_bits = d.mantissa.bits() as i64;
        let n_drop = (n_bits - 64).max(0);
        let d_drop = (d_bits - 64).max(0);
        let nm = (&n.mantissa >> n_drop as usize).to_f64().unwrap_or(f64::NAN);
        let dm = (&d.mantissa >> d_drop as usize).to_f64().unwrap_or(f64::NAN);
        scale_pow2(nm / dm, (n.exponent + n_drop) - (d.exponent + d_drop))
    }
}

impl PartialEq for ExactOutput {
    fn eq(&self, other: &Self) -> bool {
        self.numerator.mul(&other.denominator) == other.numerator.mul(&self.denominator)
    }
}

impl Eq for ExactOutput {}

/// Exact arithmetic behind the unit structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactDatapath {
    input: QFormat,
}

impl Default for ExactDatapath {
    fn default() -> Self {
        ExactDatapath {
            input: QFormat::INPUT,
        }
    }
}

impl ExactDatapath {
    pub fn new(input: QFormat) -> Self {
        ExactDatapath { input }
    }
}

impl Datapath for ExactDatapath {
    type Unnormed = Dyadic;
    type Sum = Dyadic;
    type Recip = Dyadic;
    type Output = ExactOutput;

    fn input_format(&self) -> QFormat {
        self.input
    }

    fn pow2(&self, x: QValue, reference: i64) -> Result<Dyadic> {
        let n = x.format().frac_bits();
        let delta = x.raw() as i128 - ((reference as i128) << n);
        if delta > 0 {
            return Err(Error::ExponentAboveMax {
                x: x.to_real(),
                max: reference,
            });
        }
        let int_part = delta >> n;
        let frac = (delta - (int_part << n)) as f64 / (n as f64).exp2();
        let mantissa = Dyadic::from_f64(libm::exp2(frac))?;
        Ok(mantissa.shr(int_part.unsigned_abs() as u64))
    }

    fn local_sum(&self, terms: &[Dyadic]) -> Dyadic {
        pairwise_sum(terms, |a, b| a + b).unwrap_or_else(Dyadic::zero)
    }

    fn shift_sum(&self, sum: &Dyadic, k: u64) -> Dyadic {
        sum.shr(k)
    }

    fn add_sums(&self, a: &Dyadic, b: &Dyadic) -> Dyadic {
        a + b
    }

    fn reciprocal(&self, denominator: &Dyadic) -> Result<Dyadic> {
        if denominator.is_zero() || denominator.is_negative() {
            return Err(Error::VanishedDenominator);
        }
        Ok(denominator.clone())
    }

    fn scale(&self, value: &Dyadic, renorm: u64, recip: &Dyadic) -> ExactOutput {
        ExactOutput {
            numerator: value.shr(renorm),
            denominator: recip.clone(),
        }
    }
}
