//! Row and matrix drivers.
//!
//! A row is cut into slices of `lane_width` lanes (the last slice keeps its
//! true length). Phase one walks the slices once: IntMax of the slice, powers
//! of two against the running integer max, and a reduction into the running
//! state. Phase two normalizes every retained slice against the final state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{ExactDatapath, ExactOutput};
use crate::matrix::Matrix;
use crate::qnum::{self, QValue};
use crate::units::{self, Datapath, FixedDatapath, Formats, RowState, SliceOutput};

/// Lane widths of the reference vector units.
pub const STANDARD_LANE_WIDTHS: [usize; 2] = [16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Bit-accurate fixed-point datapath.
    Quantized,
    /// Same control flow on exact dyadic rationals.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    lane_width: usize,
    pub formats: Formats,
    pub mode: Mode,
    /// Fan rows out to worker threads. Results do not depend on it.
    #[serde(skip)]
    pub parallel: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            lane_width: 16,
            formats: Formats::default(),
            mode: Mode::Quantized,
            parallel: false,
        }
    }
}

impl EngineConfig {
    pub fn new(lane_width: usize, mode: Mode) -> Result<Self> {
        if lane_width == 0 {
            return Err(Error::ZeroLaneWidth);
        }
        Ok(EngineConfig {
            lane_width,
            mode,
            ..EngineConfig::default()
        })
    }

    pub fn lane_width(&self) -> usize {
        self.lane_width
    }

    /// Set when the lane width is not one of [`STANDARD_LANE_WIDTHS`].
    pub fn lane_width_warning(&self) -> bool {
        !STANDARD_LANE_WIDTHS.contains(&self.lane_width)
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }
}

/// Activity counters. Proxies for datapath work, not a cost model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub renorm_events: u64,
    pub slices: u64,
    pub shift_ops: u64,
    pub mul_ops: u64,
    pub lut_reads: u64,
    pub add_ops: u64,
    pub rows: u64,
    pub cols: u64,
}

impl RunStats {
    pub fn accumulate(&mut self, other: &RunStats) {
        self.renorm_events += other.renorm_events;
        self.slices += other.slices;
        self.shift_ops += other.shift_ops;
        self.mul_ops += other.mul_ops;
        self.lut_reads += other.lut_reads;
        self.add_ops += other.add_ops;
        self.rows += other.rows;
        self.cols = self.cols.max(other.cols);
    }
}

/// Everything one row run produces.
#[derive(Debug, Clone)]
pub struct RowRun<D: Datapath> {
    pub outputs: Vec<D::Output>,
    pub state: RowState<D::Sum>,
    pub slices: Vec<SliceOutput<D::Unnormed>>,
    pub stats: RunStats,
}

impl<D: Datapath> RowRun<D> {
    pub fn denominator(&self) -> &D::Sum {
        self.state.running_sum().expect("a finished row is initialized")
    }
}

fn check_row(xs: &[QValue], dp: &impl Datapath, lane_width: usize) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::EmptyRow);
    }
    if lane_width == 0 {
        return Err(Error::ZeroLaneWidth);
    }
    let fmt = dp.input_format();
    match xs.iter().find(|x| x.format() != fmt) {
        Some(x) => Err(Error::FormatMismatch(x.format(), fmt)),
        None => Ok(()),
    }
}

fn exponentiate<D: Datapath>(
    dp: &D,
    slice: &[QValue],
    reference: i64,
    stats: &mut RunStats,
) -> Result<Vec<D::Unnormed>> {
    let n = dp.input_format().frac_bits();
    for &x in slice {
        stats.lut_reads += 1;
        if units::pow2_reads_slope(x, reference) {
            stats.lut_reads += 1;
            stats.mul_ops += 1;
            stats.add_ops += 1;
        }
        if (x.raw() as i128) < ((reference as i128) << n) {
            stats.shift_ops += 1;
        }
    }
    stats.add_ops += slice.len().saturating_sub(1) as u64;
    stats.slices += 1;
    slice.iter().map(|&x| dp.pow2(x, reference)).collect()
}

fn finish<D: Datapath>(
    dp: &D,
    state: RowState<D::Sum>,
    slices: Vec<SliceOutput<D::Unnormed>>,
    mut stats: RunStats,
) -> Result<RowRun<D>> {
    let outputs = units::normalize(dp, &slices, &state)?;
    let RowState::Active {
        running_max,
        running_sum,
    } = &state
    else {
        return Err(Error::Uninitialized);
    };
    let recip = dp.reciprocal(running_sum)?;
    stats.lut_reads += 1;
    if dp.reciprocal_reads_slope(running_sum) {
        stats.lut_reads += 1;
        stats.mul_ops += 1;
        stats.add_ops += 1;
    }
    let tail_shift = dp.scale_shifts(&recip) as u64;
    for slice in &slices {
        let n = slice.unnormed.len() as u64;
        stats.mul_ops += n;
        stats.shift_ops += n * tail_shift;
        if slice.max_used != *running_max {
            stats.shift_ops += n;
        }
    }
    stats.rows = 1;
    stats.cols = outputs.len() as u64;
    Ok(RowRun {
        outputs,
        state,
        slices,
        stats,
    })
}

/// One-pass online row. Each slice is exponentiated against the running
/// integer max including the slice's own IntMax, so the running sum is the
/// only quantity that ever needs renormalizing.
pub fn online_row<D: Datapath>(dp: &D, xs: &[QValue], lane_width: usize) -> Result<RowRun<D>> {
    check_row(xs, dp, lane_width)?;
    let mut stats = RunStats::default();
    let mut state = RowState::Empty;
    let mut slices = Vec::with_capacity(xs.len().div_ceil(lane_width));
    for chunk in xs.chunks(lane_width) {
        let local_max = units::intmax_slice(chunk)?;
        let reference = match state.running_max() {
            Some(running) => {
                stats.add_ops += 1;
                if local_max > running {
                    stats.renorm_events += 1;
                    stats.shift_ops += 1;
                }
                running.max(local_max)
            }
            None => local_max,
        };
        let vals = exponentiate(dp, chunk, reference, &mut stats)?;
        let (next, out) = units::reduce_slice(dp, vals, reference, &state);
        state = next;
        slices.push(out);
    }
    finish(dp, state, slices, stats)
}

/// Two-pass reference row: global IntMax first, then the same slice
/// reductions with every lane exponentiated against it.
pub fn two_pass_row<D: Datapath>(dp: &D, xs: &[QValue], lane_width: usize) -> Result<RowRun<D>> {
    check_row(xs, dp, lane_width)?;
    let global = units::intmax_slice(xs)?;
    let mut stats = RunStats::default();
    let mut state = RowState::Empty;
    let mut slices = Vec::with_capacity(xs.len().div_ceil(lane_width));
    for chunk in xs.chunks(lane_width) {
        if state.is_initialized() {
            stats.add_ops += 1;
        }
        let vals = exponentiate(dp, chunk, global, &mut stats)?;
        let (next, out) = units::reduce_slice(dp, vals, global, &state);
        state = next;
        slices.push(out);
    }
    finish(dp, state, slices, stats)
}

/// Outputs of a row in whichever arithmetic the configuration selects.
#[derive(Debug, Clone, PartialEq)]
pub enum RowOutputs {
    Quantized(Vec<QValue>),
    Exact(Vec<ExactOutput>),
}

impl RowOutputs {
    pub fn len(&self) -> usize {
        match self {
            RowOutputs::Quantized(v) => v.len(),
            RowOutputs::Exact(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn quantized(&self) -> Option<&[QValue]> {
        match self {
            RowOutputs::Quantized(v) => Some(v),
            RowOutputs::Exact(_) => None,
        }
    }

    pub fn to_reals(&self) -> Vec<f64> {
        match self {
            RowOutputs::Quantized(v) => v.iter().map(|q| q.to_real()).collect(),
            RowOutputs::Exact(v) => v.iter().map(ExactOutput::to_f64).collect(),
        }
    }
}

/// Softmax of one row of input-format scores.
pub fn softermax_row(xs: &[QValue], cfg: &EngineConfig) -> Result<(RowOutputs, RunStats)> {
    match cfg.mode {
        Mode::Quantized => {
            let run = online_row(&FixedDatapath::new(cfg.formats), xs, cfg.lane_width)?;
            Ok((RowOutputs::Quantized(run.outputs), run.stats))
        }
        Mode::Exact => {
            let run = online_row(&ExactDatapath::new(cfg.formats.input), xs, cfg.lane_width)?;
            Ok((RowOutputs::Exact(run.outputs), run.stats))
        }
    }
}

/// Merge two row states: the smaller max's sum is shifted by the difference.
pub fn merge_row_states<D: Datapath>(
    dp: &D,
    a: &RowState<D::Sum>,
    b: &RowState<D::Sum>,
) -> Result<RowState<D::Sum>> {
    match (a, b) {
        (
            RowState::Active {
                running_max: ma,
                running_sum: sa,
            },
            RowState::Active {
                running_max: mb,
                running_sum: sb,
            },
        ) => {
            let (running_max, running_sum) = units::combine(dp, (*ma, sa), (*mb, sb));
            Ok(RowState::Active {
                running_max,
                running_sum,
            })
        }
        _ => Err(Error::Uninitialized),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixOutputs {
    Quantized(Matrix<QValue>),
    Exact(Matrix<ExactOutput>),
}

impl MatrixOutputs {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixOutputs::Quantized(m) => m.shape(),
            MatrixOutputs::Exact(m) => m.shape(),
        }
    }

    pub fn quantized(&self) -> Option<&Matrix<QValue>> {
        match self {
            MatrixOutputs::Quantized(m) => Some(m),
            MatrixOutputs::Exact(_) => None,
        }
    }

    pub fn to_reals(&self) -> Matrix<f64> {
        match self {
            MatrixOutputs::Quantized(m) => m.map(|q| q.to_real()),
            MatrixOutputs::Exact(m) => m.map(ExactOutput::to_f64),
        }
    }
}

fn run_matrix<D: Datapath>(
    dp: &D,
    m: &Matrix<QValue>,
    lane_width: usize,
    parallel: bool,
) -> Result<(Matrix<D::Output>, RunStats)> {
    let rows: Vec<Result<RowRun<D>>> = if parallel {
        m.iter_rows()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|row| online_row(dp, row, lane_width))
            .collect()
    } else {
        m.iter_rows().map(|row| online_row(dp, row, lane_width)).collect()
    };
    let mut stats = RunStats::default();
    let mut data = Vec::with_capacity(m.rows() * m.cols());
    for run in rows {
        let run = run?;
        stats.accumulate(&run.stats);
        data.extend(run.outputs);
    }
    Ok((Matrix::new(m.rows(), m.cols(), data)?, stats))
}

/// Row-wise softmax of a score matrix.
pub fn softermax_matrix(m: &Matrix<QValue>, cfg: &EngineConfig) -> Result<(MatrixOutputs, RunStats)> {
    match cfg.mode {
        Mode::Quantized => {
            let dp = FixedDatapath::new(cfg.formats);
            let (out, stats) = run_matrix(&dp, m, cfg.lane_width, cfg.parallel)?;
            Ok((MatrixOutputs::Quantized(out), stats))
        }
        Mode::Exact => {
            let dp = ExactDatapath::new(cfg.formats.input);
            let (out, stats) = run_matrix(&dp, m, cfg.lane_width, cfg.parallel)?;
            Ok((MatrixOutputs::Exact(out), stats))
        }
    }
}

/// Quantize a real matrix into the configured input format.
pub fn quantize_inputs(m: &Matrix<f64>, cfg: &EngineConfig) -> Result<Matrix<QValue>> {
    m.try_map(|&v| qnum::quantize(v, cfg.formats.input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnum::QFormat;

    fn row(vals: &[f64]) -> Vec<QValue> {
        vals.iter()
            .map(|&v| qnum::quantize(v, QFormat::INPUT).unwrap())
            .collect()
    }

    fn raws(v: &[QValue]) -> Vec<i64> {
        v.iter().map(|q| q.raw()).collect()
    }

    fn cfg(lane: usize) -> EngineConfig {
        EngineConfig::new(lane, Mode::Quantized).unwrap()
    }

    #[test]
    fn worked_example_every_slice_width() {
        let dp = FixedDatapath::default();
        let xs = row(&[2.0, 1.0, 3.0]);
        for lane in 1..=3 {
            let run = online_row(&dp, &xs, lane).unwrap();
            assert_eq!(run.state.running_max(), Some(3));
            assert_eq!(run.denominator().to_real(), 1.75);
            assert_eq!(raws(&run.outputs), [36, 18, 73], "lane {lane}");
        }
        let (out, stats) = softermax_row(&xs, &cfg(16)).unwrap();
        assert_eq!(raws(out.quantized().unwrap()), [36, 18, 73]);
        assert_eq!(stats.renorm_events, 0);
        let (_, stats) = softermax_row(&xs, &cfg(2)).unwrap();
        assert_eq!(stats.renorm_events, 1);
        assert_eq!(stats.slices, 2);
    }

    #[test]
    fn uniform_and_singleton_rows() {
        let (out, _) = softermax_row(&row(&[5.0; 4]), &cfg(16)).unwrap();
        assert!(out.to_reals().iter().all(|&v| v == 0.25));
        for x in [-7.0, 0.0, 3.0, 12.0] {
            let (out, _) = softermax_row(&row(&[x]), &cfg(16)).unwrap();
            assert_eq!(out.to_reals(), [1.0]);
        }
    }

    #[test]
    fn row_errors() {
        assert!(matches!(softermax_row(&[], &cfg(16)), Err(Error::EmptyRow)));
        let wrong = vec![qnum::quantize(1.0, QFormat::POW_SUM).unwrap()];
        assert!(matches!(
            softermax_row(&wrong, &cfg(16)),
            Err(Error::FormatMismatch(..))
        ));
        assert!(matches!(EngineConfig::new(0, Mode::Exact), Err(Error::ZeroLaneWidth)));
    }

    #[test]
    fn lane_width_warning_flag() {
        assert!(!cfg(16).lane_width_warning());
        assert!(!cfg(32).lane_width_warning());
        assert!(cfg(7).lane_width_warning());
    }

    #[test]
    fn merge_examples() {
        let dp = FixedDatapath::default();
        let st = |m: i64, s: f64| RowState::Active {
            running_max: m,
            running_sum: qnum::quantize(s, QFormat::POW_SUM).unwrap(),
        };
        assert_eq!(merge_row_states(&dp, &st(2, 1.5), &st(3, 1.0)).unwrap(), st(3, 1.75));
        assert_eq!(merge_row_states(&dp, &st(3, 1.0), &st(2, 1.5)).unwrap(), st(3, 1.75));
        assert_eq!(merge_row_states(&dp, &st(4, 2.0), &st(4, 0.5)).unwrap(), st(4, 2.5));
        assert!(matches!(
            merge_row_states(&dp, &RowState::Empty, &st(4, 0.5)),
            Err(Error::Uninitialized)
        ));
    }

    #[test]
    fn exact_mode_worked_example() {
        let xs = row(&[2.0, 1.0, 3.0]);
        let c = EngineConfig::new(2, Mode::Exact).unwrap();
        let (out, _) = softermax_row(&xs, &c).unwrap();
        let reals = out.to_reals();
        for (o, t) in reals.iter().zip([0.5 / 1.75, 0.25 / 1.75, 1.0 / 1.75]) {
            assert!((o - t).abs() < 1e-15);
        }
        let run = online_row(&ExactDatapath::default(), &xs, 1).unwrap();
        assert_eq!(run.denominator().to_f64(), 1.75);
    }

    #[test]
    fn matrix_examples() {
        let m = Matrix::from_rows(vec![row(&[2.0, 1.0, 3.0])]).unwrap();
        let (out, stats) = softermax_matrix(&m, &cfg(16)).unwrap();
        assert_eq!(raws(out.quantized().unwrap().row(0)), [36, 18, 73]);
        assert_eq!((stats.rows, stats.cols), (1, 3));

        let m = Matrix::from_rows(vec![row(&[1.0; 4]), row(&[1.0; 4])]).unwrap();
        let (out, _) = softermax_matrix(&m, &cfg(16)).unwrap();
        assert!(out.to_reals().as_slice().iter().all(|&v| v == 0.25));

        let n = 4;
        let rows: Vec<Vec<QValue>> = (0..n)
            .map(|i| row(&(0..n).map(|j| if i == j { 4.0 } else { 0.0 }).collect::<Vec<_>>()))
            .collect();
        let m = Matrix::from_rows(rows).unwrap();
        let (out, _) = softermax_matrix(&m, &cfg(16).with_parallel(true)).unwrap();
        let q = out.quantized().unwrap();
        let mut first: Vec<i64> = raws(q.row(0));
        first.sort();
        for i in 0..n {
            let r = raws(q.row(i));
            let argmax = (0..n).max_by_key(|&j| (r[j], std::cmp::Reverse(j))).unwrap();
            assert_eq!(argmax, i);
            let mut sorted = r.clone();
            sorted.sort();
            assert_eq!(sorted, first);
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let rows: Vec<Vec<QValue>> = (0..20)
            .map(|i| row(&(0..50).map(|j| ((i * 7 + j * 13) % 23) as f64 / 4.0 - 2.0).collect::<Vec<_>>()))
            .collect();
        let m = Matrix::from_rows(rows).unwrap();
        for mode in [Mode::Quantized, Mode::Exact] {
            let c = EngineConfig::new(16, mode).unwrap();
            let serial = softermax_matrix(&m, &c).unwrap();
            let parallel = softermax_matrix(&m, &c.clone().with_parallel(true)).unwrap();
            assert_eq!(serial, parallel);
        }
    }
}
