use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use skynow::config::PipelineConfig;

mod commands;
mod workspace;

#[derive(Parser, Debug)]
#[command(
    name = "skynow",
    version,
    about = "Irradiance estimation and nowcasting from sky images"
)]
struct Cli {
    /// TOML file merged over the built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "folsom")]
    site: String,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Artifact directory shared by all steps.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Print what would be read and written, then stop.
    #[arg(long, global = true)]
    dry_run: bool,
    /// -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Index raw images and fuse sensor readings into a series.
    Ingest(commands::IngestArgs),
    /// Crop, mask and resize ingested images into tensor frames.
    Process(commands::ProcessArgs),
    /// Label images with irradiance (unshifted and training-shifted).
    Align(commands::AlignArgs),
    /// Year-based train/test split and day-grouped folds.
    Split(NoArgs),
    /// Fit the ridge estimator; optionally sweep the training time shift.
    Fit(commands::FitArgs),
    /// Score estimates on the test set by sky, season and hour.
    Evaluate(commands::EvaluateArgs),
    /// Two-step nowcast against smart persistence.
    Forecast(commands::ForecastArgs),
    /// Generate a synthetic corpus with known ground truth.
    Synth(commands::SynthArgs),
}

#[derive(Args, Debug)]
struct NoArgs {}

pub struct Context {
    pub config: PipelineConfig,
    pub site: String,
    pub seed: u64,
    pub out: PathBuf,
    pub dry_run: bool,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    };
    let config = match config.and_then(|c| {
        c.site(&cli.site)?;
        Ok(c)
    }) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(jobs) = cli.jobs {
        skynow::par::configure_threads(jobs);
    }
    let ctx = Context {
        config,
        site: cli.site,
        seed: cli.seed,
        out: cli.out,
        dry_run: cli.dry_run,
    };
    let result = match &cli.command {
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::Process(a) => commands::process(&ctx, a),
        Command::Align(a) => commands::align(&ctx, a),
        Command::Split(_) => commands::split(&ctx),
        Command::Fit(a) => commands::fit(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Forecast(a) => commands::forecast(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_DATA
            })
        }
    }
}
