//! `triso-morph`: batch pipeline over synthetic or annotated datasets.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
//! 4 internal invariant violation.

mod config;
mod error;
mod evaluate;
mod fit;
mod ground_truth;
mod measure;
mod report;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "triso-morph", version, about = "Coated-particle cross-section morphometry")]
struct Cli {
    /// Worker threads (0 = all cores). Never changes the output.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// TOML or JSON run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Compose ground-truth masks from boundary annotations.
    GroundTruth(GroundTruthArgs),
    /// Measure section masks into observation sets.
    Measure(MeasureArgs),
    /// Fit the nested-sphere model to observation sets.
    Fit(FitArgs),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateArgs),
    /// Summarize fitted radii and compare with as-fabricated values.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of particles.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GroundTruthArgs {
    /// Directory of `<stem>.csv` annotations with `<stem>.pgm|png` images
    /// and optional `<stem>.opyc.pgm|png` OPyC masks.
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Pixel scale of the annotated images (μm/px).
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Crop margin around the particle (px).
    #[arg(long, default_value_t = 10)]
    pub margin: u32,
    /// Skip the square crop.
    #[arg(long)]
    pub no_crop: bool,
    /// Resize the cropped pair to this side (px).
    #[arg(long)]
    pub resize: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct MeasureArgs {
    /// Dataset root or directory tree of `section_<j>.mask.pgm|png` files.
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Observations JSON.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Observations JSON (as written by `measure`, or a bare array).
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Fit results JSON.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub multistart: Option<usize>,
    /// Fit particles with unobserved boundaries instead of rejecting them.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of predicted masks.
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    /// Directory of ground-truth masks, aligned by relative path.
    #[arg(long, value_name = "DIR")]
    pub truth: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Fit results JSON.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// As-fabricated dimensions (TOML or JSON).
    #[arg(long, value_name = "FILE")]
    pub fab: Option<PathBuf>,
    #[arg(long, default_value = "compact")]
    pub compact_id: String,
    /// Histogram bin width (μm).
    #[arg(long, default_value_t = 5.0)]
    pub bin_width: f64,
    /// Use per-particle ratios instead of the ratio of means.
    #[arg(long)]
    pub per_particle: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let jobs = cli.jobs.or(cfg.jobs).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    log::info!("running with {} worker threads", pool.current_num_threads());
    pool.install(|| match cli.command {
        Command::Synth(a) => synth::run(&a, &cfg),
        Command::GroundTruth(a) => ground_truth::run(&a),
        Command::Measure(a) => measure::run(&a),
        Command::Fit(a) => fit::run(&a, &cfg),
        Command::Evaluate(a) => evaluate::run(&a),
        Command::Report(a) => report::run(&a),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("triso-morph: {e}");
            e.exit_code()
        }
    }
}
