//! Acceptance checks for the softermax model. Each check returns an
//! [`Outcome`]; the `acceptance` test target runs them all and prints one
//! line per check.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;

use softermax::exact::ExactDatapath;
use softermax::harness::{self, Distribution, GenSpec, Input, ScoreRng};
use softermax::lpw::{build_pow2_table, eval_lpw, POW2_SEGMENTS};
use softermax::oracle::{self, Base};
use softermax::qnum::quantize;
use softermax::streaming::{merge_row_states, online_row, quantize_inputs, softermax_matrix, two_pass_row};
use softermax::units::{pow2_q, FixedDatapath, RowState};
use softermax::{EngineConfig, Mode, QFormat, QValue};

pub const CORPUS_ROWS: usize = 10_000;
pub const CORPUS_MAX_LEN: usize = 2048;
pub const ACCURACY_ROWS: usize = 1_000;
pub const ARGMAX_ROWS: usize = 10_000;
pub const SEQ_LEN: usize = 384;

/// Stated ceilings for the length-384 accuracy check.
pub const MAX_ABS_ERR_CEILING: f64 = 1.0 / 32.0;
pub const SUM_DEV_CEILING: f64 = 1.0 / 16.0;
pub const ARGMAX_THRESHOLD: f64 = 0.999;

const SUM_ULP: f64 = 1.0 / 64.0;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] criterion {}: {} ({:.1}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

fn timed(id: u8, name: &'static str, check: impl FnOnce() -> Result<String, String>) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = match check() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Outcome {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn input(v: f64) -> QValue {
    quantize(v, QFormat::INPUT).expect("in range")
}

/// Smallest power of two not below `v`.
pub fn pow2_ceiling(v: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        v.log2().ceil().exp2()
    }
}

#[derive(Debug, Clone)]
pub struct CorpusRow {
    pub lane: usize,
    pub distribution: Distribution,
    pub xs: Vec<QValue>,
}

/// Mixed corpus: lengths 1..=2048, lane widths 16 and 32, normal(0,1) and
/// uniform(-4,4) rows, all drawn from one seeded stream.
pub fn corpus(rows: usize, seed: u64) -> Vec<CorpusRow> {
    let mut rng = ScoreRng::new(seed);
    let dists = [
        Distribution::Normal { mu: 0.0, sigma: 1.0 },
        Distribution::Uniform { lo: -4.0, hi: 4.0 },
    ];
    (0..rows)
        .map(|i| {
            let len = match i {
                0..=3 => 1,
                4..=7 => CORPUS_MAX_LEN,
                _ => 1 + (rng.next_word() % CORPUS_MAX_LEN as u64) as usize,
            };
            let distribution = dists[i % 2];
            let lane = [16, 32][(i / 2) % 2];
            let xs = (0..len)
                .map(|_| {
                    let v = match distribution {
                        Distribution::Normal { mu, sigma } => mu + sigma * rng.normal(),
                        Distribution::Uniform { lo, hi } => lo + (hi - lo) * rng.uniform(),
                        Distribution::Attention { .. } => unreachable!(),
                    };
                    input(v)
                })
                .collect();
            CorpusRow { lane, distribution, xs }
        })
        .collect()
}

pub fn worked_example() -> Outcome {
    timed(1, "worked example [2,1,3]", || {
        let xs = [input(2.0), input(1.0), input(3.0)];
        let dp = FixedDatapath::default();
        let mut seen = Vec::new();
        for lane in 1..=3 {
            let run = online_row(&dp, &xs, lane).map_err(|e| e.to_string())?;
            let d = *run.denominator();
            let outs: Vec<i64> = run.outputs.iter().map(|v| v.raw()).collect();
            ensure(d.format() == QFormat::POW_SUM && d.raw() == 112, || {
                format!("lane {lane}: denominator {} (raw {})", d.to_real(), d.raw())
            })?;
            ensure(outs == [36, 18, 73], || format!("lane {lane}: outputs {outs:?}"))?;
            seen.push(d.to_real());
        }
        Ok(format!("denominator {:?} for slice widths 1..3, outputs raw [36, 18, 73]", seen))
    })
}

pub fn exact_online_equals_two_pass(rows: &[CorpusRow]) -> Outcome {
    timed(2, "exact-mode online == two-pass", || {
        let dp = ExactDatapath::default();
        let bad: Vec<usize> = rows
            .par_iter()
            .enumerate()
            .filter_map(|(i, r)| {
                let same = match (online_row(&dp, &r.xs, r.lane), two_pass_row(&dp, &r.xs, r.lane)) {
                    (Ok(a), Ok(b)) => a.denominator() == b.denominator() && a.outputs == b.outputs,
                    _ => false,
                };
                (!same).then_some(i)
            })
            .collect();
        ensure(bad.is_empty(), || format!("{} mismatching rows, first {:?}", bad.len(), bad.first()))?;
        let elems: usize = rows.iter().map(|r| r.xs.len()).sum();
        Ok(format!("{} rows, {} elements, all bit-identical", rows.len(), elems))
    })
}

pub fn quantized_slice_order_bound(rows: &[CorpusRow]) -> Outcome {
    timed(3, "quantized slice-order bound", || {
        let dp = FixedDatapath::default();
        let results: Vec<Result<(f64, f64), String>> = rows
            .par_iter()
            .map(|r| {
                let a = online_row(&dp, &r.xs, r.lane).map_err(|e| e.to_string())?;
                let b = two_pass_row(&dp, &r.xs, r.lane).map_err(|e| e.to_string())?;
                let slices = r.xs.len().div_ceil(r.lane) as f64;
                let gap = (a.denominator().to_real() - b.denominator().to_real()).abs();
                if gap > slices * SUM_ULP {
                    return Err(format!("gap {gap} over {slices} slices"));
                }
                let mut sorted = r.xs.clone();
                sorted.sort_by_key(|v| std::cmp::Reverse(v.raw()));
                let a = online_row(&dp, &sorted, r.lane).map_err(|e| e.to_string())?;
                let b = two_pass_row(&dp, &sorted, r.lane).map_err(|e| e.to_string())?;
                if a.stats.renorm_events != 0 || a.denominator() != b.denominator() || a.outputs != b.outputs {
                    return Err("sorted-descending row differs from two-pass".into());
                }
                Ok((gap, gap / (slices * SUM_ULP)))
            })
            .collect();
        let mut worst_gap = 0.0f64;
        let mut worst_ratio = 0.0f64;
        for r in results {
            let (gap, ratio) = r?;
            worst_gap = worst_gap.max(gap);
            worst_ratio = worst_ratio.max(ratio);
        }
        Ok(format!(
            "{} rows; worst |d_online - d_twopass| {worst_gap} ({:.3} of bound); sorted rows bit-identical with 0 renorms",
            rows.len(),
            worst_ratio
        ))
    })
}

fn seq_rows(rows: usize, seed: u64) -> (softermax::Matrix<QValue>, softermax::Matrix<f64>) {
    let spec = GenSpec::new(Distribution::Normal { mu: 0.0, sigma: 1.0 }, rows, SEQ_LEN, seed).expect("valid");
    let q = quantize_inputs(&harness::generate(&spec).expect("generated"), &EngineConfig::default())
        .expect("quantized");
    let reference = oracle::reference_matrix(&q.map(|v| v.to_real()), Base::Two).expect("reference");
    (q, reference)
}

pub fn kernel_accuracy() -> Outcome {
    timed(4, "kernel accuracy vs base-2 oracle (len 384)", || {
        let (q, reference) = seq_rows(ACCURACY_ROWS, 2024);
        let mut parts = Vec::new();
        let mut ok = true;
        for lane in [16, 32] {
            let cfg = EngineConfig::new(lane, Mode::Quantized).expect("lane").with_parallel(true);
            let (out, _) = softermax_matrix(&q, &cfg).map_err(|e| e.to_string())?;
            let report = oracle::compare(out.quantized().expect("quantized"), &reference).map_err(|e| e.to_string())?;
            ok &= report.max_abs_err <= MAX_ABS_ERR_CEILING && report.max_sum_dev <= SUM_DEV_CEILING;
            parts.push(format!(
                "lane {lane}: max_abs_err {:.6} (pow2 ceil {}), max_sum_dev {:.6} (pow2 ceil {})",
                report.max_abs_err,
                pow2_ceiling(report.max_abs_err),
                report.max_sum_dev,
                pow2_ceiling(report.max_sum_dev)
            ));
        }
        // What the output format allows at best: the exact reference rounded
        // to nearest into the output format.
        let ideal = reference.map(|&v| quantize(v, QFormat::OUTPUT).expect("in range"));
        let floor = oracle::compare(&ideal, &reference).map_err(|e| e.to_string())?;
        let detail = format!(
            "{}; ceilings max_abs_err <= 2^-5, sum dev <= 2^-4; reference rounded to the output format: max_abs_err {:.6}, max_sum_dev {:.6}",
            parts.join("; "),
            floor.max_abs_err,
            floor.max_sum_dev
        );
        if ok {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

pub fn exhaustive_pow2() -> Outcome {
    timed(5, "exhaustive pow2 sweep", || {
        let fmt = QFormat::INPUT;
        let mut worst = 0.0f64;
        let mut cases = 0usize;
        for raw in fmt.raw_min()..=fmt.raw_max() {
            let x = QValue::from_raw(raw, fmt).expect("raw");
            let lowest = x.to_real().ceil() as i64;
            let highest = fmt.max_value().ceil() as i64;
            for m in lowest..=highest {
                let got = pow2_q(x, m).map_err(|e| e.to_string())?.to_real();
                worst = worst.max((got - (x.to_real() - m as f64).exp2()).abs());
                cases += 1;
            }
        }
        ensure(worst <= (-14f64).exp2(), || format!("worst error {worst}"))?;

        let table = build_pow2_table();
        for k in 0..POW2_SEGMENTS {
            let f = k as f64 / POW2_SEGMENTS as f64;
            let got = eval_lpw(&table, quantize(f, QFormat::UNNORMED).expect("frac")).map_err(|e| e.to_string())?;
            let want = quantize(f.exp2(), QFormat::UNNORMED).expect("value");
            ensure(got == want, || format!("segment {k}: {} != {}", got.raw(), want.raw()))?;
        }
        let mut prev = 0;
        for raw in 0..(1i64 << 15) {
            let v = eval_lpw(&table, QValue::from_raw(raw, QFormat::UNNORMED).expect("raw"))
                .map_err(|e| e.to_string())?
                .raw();
            ensure(v >= prev, || format!("not monotone at raw {raw}"))?;
            prev = v;
        }
        Ok(format!(
            "{cases} (x, max) pairs, worst error {worst:.3e} <= 2^-14; exact at {POW2_SEGMENTS} segment starts; monotone over 2^15 fractions"
        ))
    })
}

fn fixed_outputs(xs: &[QValue], lane: usize) -> Result<Vec<i64>, String> {
    online_row(&FixedDatapath::default(), xs, lane)
        .map(|r| r.outputs.iter().map(|v| v.raw()).collect())
        .map_err(|e| e.to_string())
}

pub fn invariance_suite(rows: &[CorpusRow]) -> Outcome {
    timed(6, "invariance suite", || {
        let sample: Vec<&CorpusRow> = rows.iter().step_by(10).collect();
        let fmt = QFormat::INPUT;
        sample.par_iter().try_for_each(|r| -> Result<(), String> {
            let out = fixed_outputs(&r.xs, r.lane)?;
            // Integer shift: move the row as far as the format allows in each direction.
            let lo = r.xs.iter().map(|v| v.raw()).min().expect("non-empty");
            let hi = r.xs.iter().map(|v| v.raw()).max().expect("non-empty");
            for k in [(fmt.raw_max() - hi) / 4, (fmt.raw_min() - lo) / 4, 1, -1] {
                if lo + 4 * k < fmt.raw_min() || hi + 4 * k > fmt.raw_max() {
                    continue;
                }
                let shifted: Vec<QValue> =
                    r.xs.iter().map(|v| QValue::from_raw(v.raw() + 4 * k, fmt).expect("raw")).collect();
                ensure(fixed_outputs(&shifted, r.lane)? == out, || format!("shift by {k} changed outputs"))?;
            }
            // Monotonicity, checked through the sort order.
            let mut order: Vec<usize> = (0..r.xs.len()).collect();
            order.sort_by_key(|&i| r.xs[i].raw());
            for w in order.windows(2) {
                ensure(out[w[0]] <= out[w[1]], || "outputs not monotone in inputs".into())?;
            }
            Ok(())
        })?;

        let dp = FixedDatapath::default();
        let states: Vec<RowState<QValue>> = sample
            .iter()
            .take(200)
            .map(|r| online_row(&dp, &r.xs, r.lane).map(|run| run.state).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        for pair in states.windows(2) {
            let ab = merge_row_states(&dp, &pair[0], &pair[1]).map_err(|e| e.to_string())?;
            let ba = merge_row_states(&dp, &pair[1], &pair[0]).map_err(|e| e.to_string())?;
            ensure(ab == ba, || "merge not commutative".into())?;
        }

        // Integer-valued uniform rows: 1/n is representable up to n = 128.
        for log_n in 0..=7 {
            let n = 1usize << log_n;
            for raw in (fmt.raw_min()..=fmt.raw_max()).step_by(4) {
                let xs = vec![QValue::from_raw(raw, fmt).expect("raw"); n];
                for lane in [16, 32] {
                    let out = fixed_outputs(&xs, lane)?;
                    ensure(out.iter().all(|&v| v == 128 / n as i64), || format!("uniform n={n} raw={raw}: {out:?}"))?;
                }
            }
        }
        for raw in fmt.raw_min()..=fmt.raw_max() {
            let out = fixed_outputs(&[QValue::from_raw(raw, fmt).expect("raw")], 16)?;
            ensure(out == [128], || format!("singleton raw {raw}: {out:?}"))?;
        }
        Ok(format!(
            "{} rows shift-invariant and monotone; {} merges commutative; uniform integer rows n=1..128 exactly 1/n; all 256 singletons exactly 1.0",
            sample.len(),
            states.len().saturating_sub(1)
        ))
    })
}

pub fn argmax_preservation() -> Outcome {
    timed(7, "argmax preservation (len 384)", || {
        let (q, reference) = seq_rows(ARGMAX_ROWS, 77);
        let mut parts = Vec::new();
        let mut ok = true;
        let ideal = reference.map(|&v| quantize(v, QFormat::OUTPUT).expect("in range").to_real());
        for lane in [0, 16, 32] {
            let out = if lane == 0 {
                ideal.clone()
            } else {
                let cfg = EngineConfig::new(lane, Mode::Quantized).expect("lane").with_parallel(true);
                softermax_matrix(&q, &cfg).map_err(|e| e.to_string())?.0.to_reals()
            };
            let (mut unique, mut matches, mut tied_outputs) = (0usize, 0usize, 0usize);
            for (o, r) in out.iter_rows().zip(reference.iter_rows()) {
                let top = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if r.iter().filter(|&&v| v == top).count() != 1 {
                    continue;
                }
                unique += 1;
                let otop = o.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if o.iter().filter(|&&v| v == otop).count() > 1 {
                    tied_outputs += 1;
                }
                if oracle::argmax(o) == oracle::argmax(r) {
                    matches += 1;
                }
            }
            let rate = matches as f64 / unique as f64;
            let label = if lane == 0 {
                "reference rounded to the output format".to_string()
            } else {
                ok &= rate >= ARGMAX_THRESHOLD;
                format!("lane {lane}")
            };
            parts.push(format!(
                "{label}: {matches}/{unique} unique-argmax rows match ({rate:.4}), {tied_outputs} with tied top outputs"
            ));
        }
        let detail = format!("{}; threshold {ARGMAX_THRESHOLD}", parts.join("; "));
        if ok {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

/// The `softermax` binary of this workspace, built if it is missing.
pub fn cli_binary() -> Result<PathBuf, String> {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let profile_dir = exe
        .parent()
        .and_then(|deps| deps.parent())
        .ok_or("cannot locate the target directory")?;
    let bin = profile_dir.join(format!("softermax{}", std::env::consts::EXE_SUFFIX));
    if !bin.exists() {
        let release = profile_dir.file_name().is_some_and(|n| n == "release");
        let mut cmd = Command::new(env!("CARGO"));
        cmd.args(["build", "--quiet", "-p", "softermax", "--bin", "softermax"]);
        if release {
            cmd.arg("--release");
        }
        let status = cmd.status().map_err(|e| e.to_string())?;
        ensure(status.success(), || "building the softermax binary failed".into())?;
    }
    ensure(bin.exists(), || format!("{} not found", bin.display()))?;
    Ok(bin)
}

pub fn determinism() -> Outcome {
    timed(8, "determinism", || {
        let bin = cli_binary()?;
        let invocations: [&[&str]; 3] = [
            &["run", "--rows", "64", "--cols", "384", "--seed", "42", "--compare-oracle"],
            &["run", "--rows", "16", "--cols", "200", "--seed", "3", "--distribution", "attention(64)", "--lane-width", "32", "--mode", "exact", "--compare-oracle"],
            &["sweep", "--lengths", "128,384,1024", "--rows", "8", "--seed", "9", "--compare-oracle", "--format", "csv"],
        ];
        for args in invocations {
            let run = |extra: Option<&str>| -> Result<Vec<u8>, String> {
                let out = Command::new(&bin).args(args).args(extra).output().map_err(|e| e.to_string())?;
                ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
                Ok(out.stdout)
            };
            let first = run(None)?;
            ensure(first == run(None)?, || format!("{args:?}: two runs differ"))?;
            ensure(first == run(Some("--serial"))?, || format!("{args:?}: serial differs from parallel"))?;
        }
        let spec = GenSpec::new(Distribution::Uniform { lo: -4.0, hi: 4.0 }, 100, 300, 5).expect("valid");
        for mode in [Mode::Quantized, Mode::Exact] {
            let cfg = EngineConfig::new(16, mode).expect("lane");
            let a = harness::run_once(&Input::Generated(spec), &cfg, true).map_err(|e| e.to_string())?;
            let b = harness::run_once(&Input::Generated(spec), &cfg.clone().with_parallel(true), true)
                .map_err(|e| e.to_string())?;
            ensure(a == b, || format!("{mode:?}: library serial and parallel reports differ"))?;
        }
        Ok(format!(
            "{} CLI invocations byte-identical across repeat and serial/parallel; library reports equal in both modes",
            invocations.len()
        ))
    })
}

pub fn run_all() -> Vec<Outcome> {
    let rows = corpus(CORPUS_ROWS, 0x5eed);
    vec![
        worked_example(),
        exact_online_equals_two_pass(&rows),
        quantized_slice_order_bound(&rows),
        kernel_accuracy(),
        exhaustive_pow2(),
        invariance_suite(&rows),
        argmax_preservation(),
        determinism(),
    ]
}
