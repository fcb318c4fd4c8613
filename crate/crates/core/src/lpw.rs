//! Linear-piecewise (LPW) function units.
//!
//! A table splits the unit interval into `num_segments` equal segments. Each
//! segment stores a chord: the intercept is the target at the left endpoint
//! and the slope is the rise across the segment, both in Q(1,15). Evaluation
//! is `m[idx] * frac(x_scaled) + c[idx]` with `x_scaled = x << log2(segments)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qnum::{self, QFormat, QValue};

/// Segment count of the power-of-two unit.
pub const POW2_SEGMENTS: usize = 4;
/// Segment count of the reciprocal unit.
pub const RECIP_SEGMENTS: usize = 8;

/// Precision of LPW inputs, intercepts and results.
pub const LPW_FORMAT: QFormat = QFormat::UNNORMED;

// m * frac lands in [-1, 1); one extra integer bit holds c + m * frac before
// it is clamped back into LPW_FORMAT.
const LPW_ACC: QFormat = QFormat::unchecked(2, 15, true);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpwFunction {
    /// `2^f` on `[0, 1)`.
    Pow2,
    /// `1/u` on `[1, 2)`, addressed by `u - 1`.
    Recip,
}

impl LpwFunction {
    fn target(self, x: f64) -> f64 {
        match self {
            LpwFunction::Pow2 => x.exp2(),
            LpwFunction::Recip => 1.0 / (1.0 + x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpwTable {
    function: LpwFunction,
    segment_bits: u32,
    m_lut: Vec<QValue>,
    c_lut: Vec<QValue>,
    domain_lo: f64,
    domain_hi: f64,
}

/// JSON shape of a dumped table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDump {
    pub function: LpwFunction,
    pub segments: usize,
    pub m_raw: Vec<i64>,
    pub c_raw: Vec<i64>,
}

impl LpwTable {
    fn chords(function: LpwFunction, segments: usize, domain: (f64, f64)) -> Self {
        debug_assert!(segments.is_power_of_two());
        let n = segments as f64;
        let mut m_lut = Vec::with_capacity(segments);
        let mut c_lut = Vec::with_capacity(segments);
        for i in 0..segments {
            let left = function.target(i as f64 / n);
            let right = function.target((i + 1) as f64 / n);
            c_lut.push(qnum::quantize(left, LPW_FORMAT).expect("finite"));
            m_lut.push(qnum::quantize(right - left, QFormat::SLOPE).expect("finite"));
        }
        LpwTable {
            function,
            segment_bits: segments.trailing_zeros(),
            m_lut,
            c_lut,
            domain_lo: domain.0,
            domain_hi: domain.1,
        }
    }

    pub fn function(&self) -> LpwFunction {
        self.function
    }

    pub fn num_segments(&self) -> usize {
        self.c_lut.len()
    }

    pub fn m_lut(&self) -> &[QValue] {
        &self.m_lut
    }

    pub fn c_lut(&self) -> &[QValue] {
        &self.c_lut
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.domain_lo, self.domain_hi)
    }

    pub fn dump(&self) -> TableDump {
        TableDump {
            function: self.function,
            segments: self.num_segments(),
            m_raw: self.m_lut.iter().map(|v| v.raw()).collect(),
            c_raw: self.c_lut.iter().map(|v| v.raw()).collect(),
        }
    }

    /// Whether evaluating at `frac_in` reads the slope LUT.
    pub fn uses_slope(&self, frac_in: QValue) -> bool {
        let r = qnum::rescale(frac_in, LPW_FORMAT).raw();
        (r << self.segment_bits) & within_mask() != 0
    }
}

fn within_mask() -> i64 {
    (1i64 << LPW_FORMAT.frac_bits()) - 1
}

/// Four chords of `2^f` over `[0, 1)`.
pub fn build_pow2_table() -> LpwTable {
    LpwTable::chords(LpwFunction::Pow2, POW2_SEGMENTS, (0.0, 1.0))
}

/// Eight chords of `1/u` over `[1, 2)`.
pub fn build_recip_table() -> LpwTable {
    LpwTable::chords(LpwFunction::Recip, RECIP_SEGMENTS, (1.0, 2.0))
}

/// Evaluate the table at `frac_in`, which must lie in `[0, 1)`; for the
/// reciprocal table this is `u - 1`.
pub fn eval_lpw(table: &LpwTable, frac_in: QValue) -> Result<QValue> {
    let x = qnum::rescale(frac_in, LPW_FORMAT.widened(1));
    let one = 1i64 << LPW_FORMAT.frac_bits();
    if frac_in.raw() < 0 || x.raw() >= one {
        return Err(Error::LpwDomain(frac_in.to_real()));
    }
    let scaled = x.raw() << table.segment_bits;
    let idx = (scaled >> LPW_FORMAT.frac_bits()) as usize;
    let within = scaled & within_mask();
    let c = table.c_lut[idx];
    if within == 0 {
        return Ok(c);
    }
    let within = QValue::from_raw(within, LPW_FORMAT)?;
    let slope_term = qnum::mul(table.m_lut[idx], within, LPW_ACC);
    let sum = qnum::add_sat(qnum::rescale(c, LPW_ACC), slope_term)?;
    Ok(qnum::rescale(sum, LPW_FORMAT))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frac(raw: i64) -> QValue {
        QValue::from_raw(raw, LPW_FORMAT).unwrap()
    }

    fn raws(v: &[QValue]) -> Vec<i64> {
        v.iter().map(|q| q.raw()).collect()
    }

    // Frozen from a 200-bit mpmath evaluation of the chord construction
    // with nearest-even quantization.
    const POW2_C: [i64; 4] = [32768, 38968, 46341, 55109];
    const POW2_M: [i64; 4] = [6200, 7373, 8768, 10427];
    const RECIP_C: [i64; 8] = [32768, 29127, 26214, 23831, 21845, 20165, 18725, 17476];
    const RECIP_M: [i64; 8] = [-3641, -2913, -2383, -1986, -1680, -1440, -1248, -1092];

    #[test]
    fn pow2_table_entries() {
        let t = build_pow2_table();
        assert_eq!(t.num_segments(), 4);
        assert_eq!(t.c_lut()[0].to_real(), 1.0);
        assert_eq!(t.c_lut()[3].raw(), 55109);
        assert_eq!(t.m_lut()[0].raw(), 6200);
        assert_eq!(raws(t.c_lut()), POW2_C);
        assert_eq!(raws(t.m_lut()), POW2_M);
        assert!(t.m_lut().iter().all(|m| m.raw() > 0));
        assert_eq!(t.domain(), (0.0, 1.0));
    }

    #[test]
    fn recip_table_entries() {
        let t = build_recip_table();
        assert_eq!(t.num_segments(), 8);
        assert_eq!(t.c_lut()[0].to_real(), 1.0);
        assert_eq!(t.c_lut()[4].raw(), 21845);
        assert_eq!(t.m_lut()[7].raw(), -1092);
        assert_eq!(raws(t.c_lut()), RECIP_C);
        assert_eq!(raws(t.m_lut()), RECIP_M);
        assert!(t.m_lut().iter().all(|m| m.raw() < 0));
    }

    #[test]
    fn pow2_eval_examples() {
        let t = build_pow2_table();
        assert_eq!(eval_lpw(&t, frac(0)).unwrap().to_real(), 1.0);
        assert_eq!(eval_lpw(&t, frac(3 << 13)).unwrap().raw(), 55109);
        // 0.375 -> segment 1, within-fraction 0.5: 38968 + floor(7373 * 0.5).
        assert_eq!(eval_lpw(&t, frac(3 << 12)).unwrap().raw(), 42654);
        assert!(!t.uses_slope(frac(3 << 13)));
        assert!(t.uses_slope(frac(3 << 12)));
    }

    #[test]
    fn domain_violations() {
        let t = build_pow2_table();
        let one = QValue::from_raw(1 << 15, LPW_FORMAT).unwrap();
        assert!(matches!(eval_lpw(&t, one), Err(Error::LpwDomain(_))));
        let neg = qnum::quantize(-0.25, QFormat::INPUT).unwrap();
        assert!(matches!(eval_lpw(&t, neg), Err(Error::LpwDomain(_))));
        let big = qnum::quantize(3.0, QFormat::POW_SUM).unwrap();
        assert!(eval_lpw(&t, big).is_err());
        // Inputs in other formats are accepted when they lie in [0, 1).
        let coarse = qnum::quantize(0.5, QFormat::INPUT).unwrap();
        assert_eq!(eval_lpw(&t, coarse).unwrap().raw(), 46341);
    }

    #[test]
    fn exact_at_left_endpoints() {
        for t in [build_pow2_table(), build_recip_table()] {
            let step = (1i64 << 15) / t.num_segments() as i64;
            for i in 0..t.num_segments() {
                let v = eval_lpw(&t, frac(i as i64 * step)).unwrap();
                assert_eq!(v, t.c_lut()[i]);
            }
        }
    }

    #[test]
    fn dense_sweep_monotone_and_bounded() {
        let pow2 = build_pow2_table();
        let recip = build_recip_table();
        let (mut prev_p, mut prev_r) = (i64::MIN, i64::MAX);
        let (mut err_p, mut err_r) = (0.0f64, 0.0f64);
        for raw in 0..(1i64 << 15) {
            let x = frac(raw);
            let p = eval_lpw(&pow2, x).unwrap();
            let r = eval_lpw(&recip, x).unwrap();
            assert!(p.raw() >= prev_p, "pow2 not monotone at {raw}");
            assert!(r.raw() <= prev_r, "recip not monotone at {raw}");
            prev_p = p.raw();
            prev_r = r.raw();
            err_p = err_p.max((p.to_real() - x.to_real().exp2()).abs());
            err_r = err_r.max((r.to_real() - 1.0 / (1.0 + x.to_real())).abs());
        }
        // Observed: pow2 6.9e-3, recip 3.3e-3.
        assert!(err_p <= 2f64.powi(-6), "pow2 max error {err_p}");
        assert!(err_r <= 2f64.powi(-7), "recip max error {err_r}");
    }

    #[test]
    fn two_fraction_bit_inputs_only_see_intercept_error() {
        let t = build_pow2_table();
        for q in 0..4 {
            let x = frac(q << 13);
            let v = eval_lpw(&t, x).unwrap();
            assert!((v.to_real() - x.to_real().exp2()).abs() <= 2f64.powi(-15));
        }
    }

    #[test]
    fn dump_shape() {
        let d = build_recip_table().dump();
        let json = serde_json::to_value(&d).unwrap();
        assert_eq!(json["function"], "recip");
        assert_eq!(json["segments"], 8);
        assert_eq!(json["c_raw"][4], 21845);
        assert_eq!(json["m_raw"].as_array().unwrap().len(), 8);
    }
}
