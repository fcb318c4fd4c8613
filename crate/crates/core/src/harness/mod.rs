//! Batch runs: generate or load a score matrix, push it through the pipeline,
//! optionally compare against the base-2 reference, and report.

pub mod generate;
pub mod io;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{self, Base, ErrorReport};
use crate::streaming::{quantize_inputs, softermax_matrix, EngineConfig, MatrixOutputs, Mode, RunStats};
use crate::units::Formats;

pub use generate::{generate, Distribution, GenSpec, ScoreRng};

pub const SCHEMA_VERSION: &str = "1";

/// Where the scores came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Generated(GenSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Source {
    Generated {
        distribution: Distribution,
        rows: usize,
        cols: usize,
        seed: u64,
    },
    File {
        path: String,
        rows: usize,
        cols: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub lane_width: usize,
    pub lane_width_warning: bool,
    pub mode: Mode,
    pub formats: Formats,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    pub config: ConfigEcho,
    pub stats: RunStats,
    /// Present only when the run was compared against the reference.
    pub errors: Option<ErrorReport>,
}

pub fn run_once(input: &Input, cfg: &EngineConfig, compare_oracle: bool) -> Result<Report> {
    let (scores, source) = match input {
        Input::Generated(spec) => (
            generate(spec)?,
            Source::Generated {
                distribution: spec.distribution,
                rows: spec.rows,
                cols: spec.cols,
                seed: spec.seed,
            },
        ),
        Input::File(path) => {
            let m = io::read_matrix(path)?;
            let source = Source::File {
                path: path.display().to_string(),
                rows: m.rows(),
                cols: m.cols(),
            };
            (m, source)
        }
    };
    let q = quantize_inputs(&scores, cfg)?;
    let (outputs, stats) = softermax_matrix(&q, cfg)?;
    let errors = if compare_oracle {
        // The reference sees the inputs the kernel saw, so input quantization
        // does not show up as kernel error.
        let reference = oracle::reference_matrix(&q.map(|v| v.to_real()), Base::Two)?;
        let report = match &outputs {
            MatrixOutputs::Quantized(m) => oracle::compare(m, &reference)?,
            MatrixOutputs::Exact(m) => oracle::compare(m, &reference)?,
        };
        let (seed, distribution) = match &source {
            Source::Generated { distribution, seed, .. } => (Some(*seed), distribution.to_string()),
            Source::File { .. } => (None, "file".to_string()),
        };
        Some(report.with_provenance(seed, distribution))
    } else {
        None
    };
    Ok(Report {
        schema_version: SCHEMA_VERSION.to_string(),
        config: ConfigEcho {
            lane_width: cfg.lane_width(),
            lane_width_warning: cfg.lane_width_warning(),
            mode: cfg.mode,
            formats: cfg.formats,
            source,
        },
        stats,
        errors,
    })
}

/// One report per sequence length, in the order given.
pub fn sweep(lengths: &[usize], cfg: &EngineConfig, spec: &GenSpec, compare_oracle: bool) -> Result<Vec<Report>> {
    if lengths.is_empty() {
        return Err(Error::InvalidSpec("no sweep lengths".into()));
    }
    lengths
        .iter()
        .map(|&cols| {
            let spec = GenSpec::new(spec.distribution, spec.rows, cols, spec.seed)?;
            run_once(&Input::Generated(spec), cfg, compare_oracle)
        })
        .collect()
}

#[derive(Serialize)]
struct CsvRow<'a> {
    schema_version: &'a str,
    mode: Mode,
    lane_width: usize,
    lane_width_warning: bool,
    source: &'a str,
    distribution: String,
    seed: Option<u64>,
    rows: u64,
    cols: u64,
    renorm_events: u64,
    slices: u64,
    shift_ops: u64,
    mul_ops: u64,
    lut_reads: u64,
    add_ops: u64,
    max_abs_err: Option<f64>,
    mean_abs_err: Option<f64>,
    max_sum_dev: Option<f64>,
    argmax_match_rate: Option<f64>,
}

/// Flat CSV: a header line, then one line per report. Error columns are empty
/// when the run was not compared.
pub fn reports_to_csv(reports: &[Report]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        let (source, distribution, seed) = match &r.config.source {
            Source::Generated { distribution, seed, .. } => ("generated", distribution.to_string(), Some(*seed)),
            Source::File { path, .. } => ("file", path.clone(), None),
        };
        let e = r.errors.as_ref();
        w.serialize(CsvRow {
            schema_version: &r.schema_version,
            mode: r.config.mode,
            lane_width: r.config.lane_width,
            lane_width_warning: r.config.lane_width_warning,
            source,
            distribution,
            seed,
            rows: r.stats.rows,
            cols: r.stats.cols,
            renorm_events: r.stats.renorm_events,
            slices: r.stats.slices,
            shift_ops: r.stats.shift_ops,
            mul_ops: r.stats.mul_ops,
            lut_reads: r.stats.lut_reads,
            add_ops: r.stats.add_ops,
            max_abs_err: e.map(|e| e.max_abs_err),
            mean_abs_err: e.map(|e| e.mean_abs_err),
            max_sum_dev: e.map(|e| e.max_sum_dev),
            argmax_match_rate: e.map(|e| e.argmax_match_rate),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::MalformedInput(e.to_string()))
}
