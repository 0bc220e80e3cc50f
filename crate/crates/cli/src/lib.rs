//! Command-line front end: inference, evaluation, MAC reports,
//! benchmarks, self-tests and weight initialisation.

mod commands;
mod selftest;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_SELFTEST: i32 = 3;

/// Environment variable overriding the kernel thread count.
pub const THREADS_ENV: &str = "BANET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "banet", version, about = "Stereo matching with bilateral cost aggregation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict a disparity map for one stereo pair.
    Infer(InferArgs),
    /// Score predicted disparities against ground truth.
    Eval(EvalArgs),
    /// Report analytic multiply-accumulate counts per stage.
    Macs(MacsArgs),
    /// Measure per-stage forward latency.
    Bench(BenchArgs),
    /// Run gradient checks, oracle comparisons and format round trips.
    Selftest(SelftestArgs),
    /// Write a seeded random weight file.
    InitWeights(InitArgs),
}

/// Ablation switches selecting the network variant.
#[derive(Debug, Clone, Copy, Args)]
pub struct VariantArgs {
    /// Replace scale-aware attention with attention from 1/4-scale features only.
    #[arg(long)]
    pub no_ssa: bool,
    /// Disable bilateral aggregation (one branch, no attention); overrides --no-ssa.
    #[arg(long)]
    pub no_ba: bool,
}

impl VariantArgs {
    pub fn variant(&self) -> banet::Variant {
        banet::Variant::from_switches(self.no_ba, self.no_ssa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DisparityFormat {
    /// Little-endian grayscale PFM, full float precision.
    Pfm,
    /// 16-bit PNG storing disparity * 256, 0 marking missing data.
    Kitti,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Left image (8-bit RGB PNG or PPM).
    #[arg(long)]
    pub left: PathBuf,
    /// Right image, same size as the left.
    #[arg(long)]
    pub right: PathBuf,
    /// Weight file matching the selected variant.
    #[arg(long)]
    pub weights: PathBuf,
    /// Output path for the full-resolution disparity.
    #[arg(long)]
    pub out_disparity: PathBuf,
    /// Optional output path for the attention map as an 8-bit PNG.
    #[arg(long)]
    pub out_attention: Option<PathBuf>,
    /// Disparity file format.
    #[arg(long, value_enum, default_value = "pfm")]
    pub format: DisparityFormat,
    #[command(flatten)]
    pub variant: VariantArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted disparity file or directory (.pfm or KITTI .png).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth disparity file or directory, paired with predictions by file stem.
    #[arg(long)]
    pub gt: PathBuf,
    /// Optional region mask file or directory (nonzero pixels are evaluated).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Region label attached to the reports when a mask is given.
    #[arg(long, default_value = "masked")]
    pub region: String,
    /// Report format.
    #[arg(long, value_enum, default_value = "json")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct MacsArgs {
    /// Input height in pixels.
    #[arg(long, default_value_t = 540)]
    pub height: usize,
    /// Input width in pixels.
    #[arg(long, default_value_t = 960)]
    pub width: usize,
    /// Report all three ablation variants instead of the selected one.
    #[arg(long)]
    pub all: bool,
    /// Emit JSON instead of a text table.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub variant: VariantArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Input height in pixels.
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    /// Input width in pixels.
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    /// Discarded warm-up passes.
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Timed passes (at least 1).
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: u64,
    /// Seed for the random inputs and, without --weights, the random weights.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight file to use instead of seeded random weights.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Use the parallel kernels (thread count from BANET_THREADS or all cores).
    #[arg(long)]
    pub parallel: bool,
    /// Emit JSON instead of a text table.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub variant: VariantArgs,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Random instances per gradient check.
    #[arg(long, default_value_t = 20)]
    pub instances: u64,
    /// Test hook: offset added to every analytic gradient before comparison.
    #[arg(long, default_value_t = 0.0)]
    pub perturb_grad: f64,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Output weight file.
    #[arg(long)]
    pub out: PathBuf,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub variant: VariantArgs,
}

/// A failure reported with exit code 2.
#[derive(Debug)]
pub struct DataError(pub String);

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<banet::Error> for DataError {
    fn from(e: banet::Error) -> Self {
        DataError(e.to_string())
    }
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError(e.to_string())
    }
}

impl From<serde_json::Error> for DataError {
    fn from(e: serde_json::Error) -> Self {
        DataError(e.to_string())
    }
}

impl From<rayon::ThreadPoolBuildError> for DataError {
    fn from(e: rayon::ThreadPoolBuildError) -> Self {
        DataError(e.to_string())
    }
}

/// Thread count requested through the environment.
pub fn env_threads() -> Result<Option<usize>, DataError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(DataError(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32, DataError> {
    let threads = env_threads()?;
    if let Some(n) = threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match command {
        Command::Infer(a) => commands::infer(&a, out),
        Command::Eval(a) => commands::eval(&a, out),
        Command::Macs(a) => commands::macs(&a, out),
        Command::Bench(a) => commands::bench(&a, threads, out),
        Command::Selftest(a) => selftest::run(&a, out),
        Command::InitWeights(a) => commands::init_weights(&a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Data errors are printed to stderr as one JSON line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli.command, &mut out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.0 }));
            EXIT_DATA
        }
    }
}
