use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use softermax::harness::{self, Distribution, GenSpec, Input, Report};
use softermax::lpw::{build_pow2_table, build_recip_table};
use softermax::{EngineConfig, Error, Mode};

#[derive(Parser)]
#[command(name = "softermax", version, about = "Fixed-point base-2 softmax model and error harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one score matrix through the pipeline.
    Run(RunArgs),
    /// Run the same configuration over several sequence lengths.
    Sweep {
        /// Comma-separated sequence lengths.
        #[arg(long, value_delimiter = ',', required = true)]
        lengths: Vec<usize>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Dump the lookup tables as JSON.
    Tables {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 16)]
    rows: usize,
    #[arg(long, default_value_t = 384)]
    cols: usize,
    /// normal(mu,sigma), uniform(lo,hi) or attention(d_k).
    #[arg(long, default_value = "normal(0,1)")]
    distribution: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    lane_width: usize,
    #[arg(long, value_enum, default_value_t = Mode::Quantized)]
    mode: Mode,
    /// Read scores from a CSV or SMX1 file instead of generating them.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compare against the double-precision base-2 reference.
    #[arg(long)]
    compare_oracle: bool,
    /// Process rows on one thread.
    #[arg(long)]
    serial: bool,
}

impl RunArgs {
    fn config(&self) -> Result<EngineConfig, Error> {
        let cfg = EngineConfig::new(self.lane_width, self.mode)?.with_parallel(!self.serial);
        if cfg.lane_width_warning() {
            eprintln!(
                "{}",
                serde_json::json!({"warning": "nonstandard_lane_width", "lane_width": self.lane_width})
            );
        }
        Ok(cfg)
    }

    fn spec(&self) -> Result<GenSpec, Error> {
        let distribution: Distribution = self.distribution.parse()?;
        GenSpec::new(distribution, self.rows, self.cols, self.seed)
    }
}

fn emit(bytes: &[u8], out: Option<&PathBuf>) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, bytes)?,
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn render<T: Serialize>(value: &T) -> Result<Vec<u8>, Error> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn render_reports(reports: &[Report], single: bool, format: OutputFormat) -> Result<Vec<u8>, Error> {
    match format {
        OutputFormat::Csv => Ok(harness::reports_to_csv(reports)?.into_bytes()),
        OutputFormat::Json if single => render(&reports[0]),
        OutputFormat::Json => render(&reports),
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.config()?;
            let input = match &args.input {
                Some(path) => Input::File(path.clone()),
                None => Input::Generated(args.spec()?),
            };
            let report = harness::run_once(&input, &cfg, args.compare_oracle)?;
            emit(&render_reports(&[report], true, args.format)?, args.out.as_ref())
        }
        Command::Sweep { lengths, run } => {
            if run.input.is_some() {
                return Err(Error::InvalidSpec("sweep generates its inputs; --input is not accepted".into()));
            }
            let cfg = run.config()?;
            let reports = harness::sweep(&lengths, &cfg, &run.spec()?, run.compare_oracle)?;
            emit(&render_reports(&reports, false, run.format)?, run.out.as_ref())
        }
        Command::Tables { out } => {
            let tables = [build_pow2_table().dump(), build_recip_table().dump()];
            emit(&render(&tables)?, out.as_ref())
        }
    }
}

fn error_line(kind: &str, message: impl std::fmt::Display) -> String {
    serde_json::json!({"error": kind, "message": message.to_string()}).to_string()
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io(_) => "io",
        Error::Csv(_) | Error::MalformedInput(_) | Error::RaggedMatrix { .. } | Error::EmptyMatrix => "input",
        Error::Json(_) => "output",
        Error::InvalidDistribution(_) | Error::InvalidSpec(_) | Error::ZeroLaneWidth => "usage",
        _ => "compute",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(error_kind(&e), &e));
            ExitCode::FAILURE
        }
    }
}
