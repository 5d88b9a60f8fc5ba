//! Command-line front end for the experiment runner.
//!
//! Values merge as: explicit flag, then the `--config` TOML file, then the
//! built-in default. `PARALAB_THREADS` caps the worker pool (0 = auto).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::experiments::{run, write_atomic, ExperimentConfig, ExperimentKind, OutputFormat};

#[derive(Parser, Debug)]
#[command(name = "paralab", version, about = "Matrix-valued d-adic paraproduct experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check every exact identity over random instances
    Identities(RunArgs),
    /// Search best-found norm-to-BMO ratios across matrix dimensions
    Katz(RunArgs),
    /// Sample commutator norm ratios across depths
    CommutatorScan(RunArgs),
    /// Sample Theta ratios across depths
    ThetaScan(RunArgs),
    /// Norms of one operator built from random symbols a and b
    Opnorm(RunArgs),
    /// Check the norm-layer invariants
    Norms(RunArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Branching factor of the lattice [default: 2]
    #[arg(long)]
    d: Option<u32>,
    /// Lattice depth N [default: 3]
    #[arg(long)]
    depth: Option<u32>,
    /// Matrix dimension m [default: 2]
    #[arg(long)]
    dim: Option<usize>,
    /// Lebesgue exponent [default: 2]
    #[arg(long)]
    p: Option<f64>,
    /// Number of random trials [default: 50]
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (required here or in the config file)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format [default: json, or csv for a .csv output path]
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Tolerance applied to every residual case [default: per case]
    #[arg(long)]
    tol: Option<f64>,
    /// TOML file with any of the settings above
    #[arg(long)]
    config: Option<PathBuf>,
    /// Matrix dimensions for katz, comma separated [default: 1,2,4,8]
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Depths for the ratio scans, comma separated [default: 4,6]
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<u32>>,
    /// Operator text for opnorm, e.g. "commutator(pi(a), mult(b))" [default: pi(b)]
    #[arg(long)]
    op: Option<String>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Param(_) | Error::Config(_) | Error::Parse { .. } | Error::Lattice(_) | Error::DimensionCap { .. } => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(path: &Path, kind: ExperimentKind) -> Result<(ExperimentConfig, bool)> {
    let text = std::fs::read_to_string(path)?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
    table.remove("kind");
    let has_format = table.contains_key("format");
    let mut config: ExperimentConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
    config.kind = kind;
    if let Some(out) = &config.out {
        if out.is_relative() {
            if let Some(dir) = path.parent() {
                config.out = Some(dir.join(out));
            }
        }
    }
    Ok((config, has_format))
}

fn merge(kind: ExperimentKind, args: RunArgs) -> Result<ExperimentConfig> {
    let (mut c, has_format) = match &args.config {
        Some(path) => load_config(path, kind)?,
        None => (ExperimentConfig::new(kind), false),
    };
    if let Some(v) = args.d {
        c.d = v;
    }
    if let Some(v) = args.depth {
        c.depth = v;
    }
    if let Some(v) = args.dim {
        c.m = v;
    }
    if let Some(v) = args.p {
        c.p = v;
    }
    if let Some(v) = args.trials {
        c.trials = v;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = args.out {
        c.out = Some(v);
    }
    if let Some(v) = args.tol {
        c.tol = Some(v);
    }
    if let Some(v) = args.dims {
        c.dims = v;
    }
    if let Some(v) = args.depths {
        c.depths = v;
    }
    if let Some(v) = args.op {
        c.operator = v;
    }
    match args.format {
        Some(FormatArg::Json) => c.format = OutputFormat::Json,
        Some(FormatArg::Csv) => c.format = OutputFormat::Csv,
        None if !has_format => {
            let csv = c
                .out
                .as_deref()
                .and_then(Path::extension)
                .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            c.format = if csv { OutputFormat::Csv } else { OutputFormat::Json };
        }
        None => {}
    }
    if c.out.is_none() {
        return Err(Error::Config("--out is required".into()));
    }
    c.validate()?;
    Ok(c)
}

fn configure_threads() -> std::result::Result<(), Failure> {
    let Ok(v) = std::env::var("PARALAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("PARALAB_THREADS must be a count, got {v:?}")))?;
    // A pool that already exists (library callers) is left alone.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn execute(kind: ExperimentKind, args: RunArgs) -> std::result::Result<bool, Failure> {
    configure_threads()?;
    let config = merge(kind, args)?;
    let report = run(&config)?;
    let bytes = report.render(config.format)?;
    let out = config.out.as_deref().expect("checked in merge");
    write_atomic(out, &bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let failed: Vec<&str> = report.cases.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    println!(
        "{} cases, max residual {:.3e}, {}",
        report.cases.len(),
        report.aggregate.max_residual,
        if failed.is_empty() { "all pass".to_string() } else { format!("failed: {}", failed.join(", ")) }
    );
    if let Some(t) = report.aggregate.wall_time {
        eprintln!("wall time {t:.3} s");
    }
    let is_suite = matches!(kind, ExperimentKind::Identities | ExperimentKind::Norms | ExperimentKind::Opnorm);
    Ok(!is_suite || report.aggregate.pass_all)
}

/// Parses `argv` and runs; returns the process exit code
/// (0 success, 1 failed suite or runtime error, 2 usage error).
pub fn run_from<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code.clamp(0, 2) as u8;
        }
    };
    let (kind, args) = match cli.command {
        Command::Identities(a) => (ExperimentKind::Identities, a),
        Command::Katz(a) => (ExperimentKind::Katz, a),
        Command::CommutatorScan(a) => (ExperimentKind::CommutatorScan, a),
        Command::ThetaScan(a) => (ExperimentKind::ThetaScan, a),
        Command::Opnorm(a) => (ExperimentKind::Opnorm, a),
        Command::Norms(a) => (ExperimentKind::Norms, a),
    };
    match execute(kind, args) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

pub fn main() -> ExitCode {
    ExitCode::from(run_from(std::env::args_os()))
}
