//! Double-precision references and error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ExactOutput;
use crate::matrix::Matrix;
use crate::qnum::QValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Base {
    E,
    Two,
}

impl Base {
    fn pow(self, x: f64) -> f64 {
        match self {
            Base::E => x.exp(),
            Base::Two => x.exp2(),
        }
    }
}

/// Which maximum the online recurrence tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxKind {
    True,
    /// Maximum of the element-wise ceilings.
    Int,
}

impl MaxKind {
    fn of(self, xs: &[f64]) -> f64 {
        let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match self {
            MaxKind::True => m,
            MaxKind::Int => m.ceil(),
        }
    }
}

fn check(xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::EmptyRow);
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Numerically stable softmax: `base^(x_i - max) / sum_j base^(x_j - max)`.
pub fn softmax_ref(xs: &[f64], base: Base) -> Result<Vec<f64>> {
    check(xs)?;
    let max = MaxKind::True.of(xs);
    let pows: Vec<f64> = xs.iter().map(|&x| base.pow(x - max)).collect();
    let sum: f64 = pows.iter().sum();
    Ok(pows.into_iter().map(|p| p / sum).collect())
}

/// Denominator of the two-pass computation, relative to the chosen max.
pub fn two_pass_denominator(xs: &[f64], base: Base, max: MaxKind) -> Result<f64> {
    check(xs)?;
    let m = max.of(xs);
    Ok(xs.iter().map(|&x| base.pow(x - m)).sum())
}

/// Online max/renormalize recurrence over slices of `slice_width`, in double
/// precision. Returns the final denominator, relative to the final max.
pub fn exact_online_ref(xs: &[f64], slice_width: usize, base: Base, max: MaxKind) -> Result<f64> {
    check(xs)?;
    if slice_width == 0 {
        return Err(Error::ZeroLaneWidth);
    }
    let mut running: Option<(f64, f64)> = None;
    for slice in xs.chunks(slice_width) {
        let local = max.of(slice);
        let next_max = running.map_or(local, |(m, _)| m.max(local));
        let local_sum: f64 = slice.iter().map(|&x| base.pow(x - next_max)).sum();
        let carried = running.map_or(0.0, |(m, d)| d * base.pow(m - next_max));
        running = Some((next_max, carried + local_sum));
    }
    Ok(running.expect("non-empty").1)
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in xs.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Values that can be compared against the reference.
pub trait AsReal {
    fn as_real(&self) -> f64;
}

impl AsReal for f64 {
    fn as_real(&self) -> f64 {
        *self
    }
}

impl AsReal for QValue {
    fn as_real(&self) -> f64 {
        self.to_real()
    }
}

impl AsReal for ExactOutput {
    fn as_real(&self) -> f64 {
        self.to_f64()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub max_abs_err: f64,
    pub mean_abs_err: f64,
    /// Worst `|sum(outputs) - 1|` over rows, on the model outputs.
    pub max_sum_dev: f64,
    pub argmax_match_rate: f64,
    pub rows: usize,
    pub cols: usize,
    pub seed: Option<u64>,
    pub distribution: String,
}

impl ErrorReport {
    pub fn with_provenance(mut self, seed: Option<u64>, distribution: impl Into<String>) -> Self {
        self.seed = seed;
        self.distribution = distribution.into();
        self
    }
}

/// Element-wise comparison of model outputs against reference outputs.
pub fn compare<T: AsReal>(fixed: &Matrix<T>, reference: &Matrix<f64>) -> Result<ErrorReport> {
    if fixed.shape() != reference.shape() {
        let (a, b) = fixed.shape();
        let (c, d) = reference.shape();
        return Err(Error::ShapeMismatch(a, b, c, d));
    }
    let mut max_abs_err = 0.0f64;
    let mut total_abs_err = 0.0f64;
    let mut max_sum_dev = 0.0f64;
    let mut matches = 0usize;
    for (frow, rrow) in fixed.iter_rows().zip(reference.iter_rows()) {
        let vals: Vec<f64> = frow.iter().map(AsReal::as_real).collect();
        let mut sum = 0.0;
        for (&v, &r) in vals.iter().zip(rrow) {
            let err = (v - r).abs();
            max_abs_err = max_abs_err.max(err);
            total_abs_err += err;
            sum += v;
        }
        max_sum_dev = max_sum_dev.max((sum - 1.0).abs());
        if argmax(&vals) == argmax(rrow) {
            matches += 1;
        }
    }
    let (rows, cols) = fixed.shape();
    Ok(ErrorReport {
        max_abs_err,
        mean_abs_err: total_abs_err / (rows * cols) as f64,
        max_sum_dev,
        argmax_match_rate: matches as f64 / rows as f64,
        rows,
        cols,
        seed: None,
        distribution: String::new(),
    })
}

/// Row-wise base-2 reference softmax of a real matrix.
pub fn reference_matrix(m: &Matrix<f64>, base: Base) -> Result<Matrix<f64>> {
    let mut data = Vec::with_capacity(m.rows() * m.cols());
    for row in m.iter_rows() {
        data.extend(softmax_ref(row, base)?);
    }
    Matrix::new(m.rows(), m.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnum::{quantize, QFormat};
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let out = softmax_ref(&[2.0, 1.0, 3.0], Base::Two).unwrap();
        for (o, t) in out.iter().zip([2.0 / 7.0, 1.0 / 7.0, 4.0 / 7.0]) {
            assert!((o - t).abs() < 1e-15);
        }
        assert_eq!(softmax_ref(&[0.0, 0.0], Base::E).unwrap(), [0.5, 0.5]);
        assert_eq!(softmax_ref(&[-123.4], Base::Two).unwrap(), [1.0]);
        assert!(softmax_ref(&[], Base::Two).is_err());
        assert!(softmax_ref(&[1.0, f64::NAN], Base::Two).is_err());
    }

    #[test]
    fn online_ref_examples() {
        let d = exact_online_ref(&[2.0, 1.0, 3.0], 1, Base::Two, MaxKind::Int).unwrap();
        assert_eq!(d, 1.75);
        let desc = [5.0, 4.5, 3.0, 1.0, -2.0];
        for w in 1..=5 {
            assert_eq!(
                exact_online_ref(&desc, w, Base::Two, MaxKind::True).unwrap(),
                two_pass_denominator(&desc, Base::Two, MaxKind::True).unwrap()
            );
        }
    }

    #[test]
    fn compare_examples() {
        let q = |raw| QValue::from_raw(raw, QFormat::OUTPUT).unwrap();
        let fixed = Matrix::from_rows(vec![vec![q(36), q(18), q(73)]]).unwrap();
        let reference =
            Matrix::from_rows(vec![softmax_ref(&[2.0, 1.0, 3.0], Base::Two).unwrap()]).unwrap();
        let r = compare(&fixed, &reference).unwrap();
        assert!((r.max_abs_err - (2.0 / 7.0 - 36.0 / 128.0)).abs() < 1e-15);
        assert!((r.max_abs_err - 0.00446).abs() < 1e-5);
        assert_eq!(r.argmax_match_rate, 1.0);

        let exact = reference.map(|&v| quantize(v, QFormat::OUTPUT).unwrap().to_real());
        let r = compare(&exact, &exact).unwrap();
        assert_eq!((r.max_abs_err, r.mean_abs_err, r.argmax_match_rate), (0.0, 0.0, 1.0));

        let a = Matrix::from_rows(vec![vec![0.2, 0.8], vec![0.6, 0.4], vec![0.1, 0.9], vec![0.3, 0.7]]).unwrap();
        let b = Matrix::from_rows(vec![vec![0.2, 0.8], vec![0.4, 0.6], vec![0.1, 0.9], vec![0.3, 0.7]]).unwrap();
        assert_eq!(compare(&a, &b).unwrap().argmax_match_rate, 0.75);

        let c = Matrix::from_rows(vec![vec![1.0]]).unwrap();
        assert!(matches!(compare(&a, &c), Err(Error::ShapeMismatch(4, 2, 1, 1))));
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    fn row() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-20.0f64..20.0, 1..200)
    }

    proptest! {
        #[test]
        fn outputs_sum_to_one_and_shift_invariant(xs in row(), c in -50.0f64..50.0) {
            let a = softmax_ref(&xs, Base::Two).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let b = softmax_ref(&shifted, Base::Two).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }

        #[test]
        fn base_change_identity(xs in row()) {
            let two = softmax_ref(&xs, Base::Two).unwrap();
            let scaled: Vec<f64> = xs.iter().map(|x| x * std::f64::consts::LN_2).collect();
            let e = softmax_ref(&scaled, Base::E).unwrap();
            for (u, v) in two.iter().zip(&e) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }

        #[test]
        fn online_matches_two_pass(xs in row(), w in 1usize..40) {
            for max in [MaxKind::True, MaxKind::Int] {
                let online = exact_online_ref(&xs, w, Base::Two, max).unwrap();
                let two = two_pass_denominator(&xs, Base::Two, max).unwrap();
                prop_assert!((online - two).abs() <= 1e-12 * two);
            }
        }
    }
}
