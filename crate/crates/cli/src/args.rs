use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gotcha_core::session::ScoreMode;
use gotcha_core::simulation::ProfileKind;

/// Challenge-response verification for live video calls: simulate sessions,
/// run populations, qualify challenge suites and calibrate thresholds.
///
/// Settings resolve in this order: command-line flags, then the manifest
/// file, then built-in defaults. Exit status is 0 on completion whatever the
/// verdicts, 2 on configuration errors and 3 on runtime errors.
#[derive(Debug, Parser)]
#[command(name = "gotcha", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON run manifest with defaults for the flags below.
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Challenge catalog (JSON). Defaults to the bundled catalog.
    #[arg(long, global = true, value_name = "PATH")]
    pub catalog: Option<PathBuf>,
    /// Directory holding genuine.json, ldfl.json, hdfl.json, fsgan.json and lia.json.
    #[arg(long, global = true, value_name = "DIR")]
    pub profiles: Option<PathBuf>,
    /// `interview`, `executive-call`, or a path to a context JSON file.
    #[arg(long, global = true, value_name = "CONTEXT")]
    pub context: Option<String>,
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Output directory. Nothing is written outside it.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "MODE")]
    pub mode: Option<ScoreMode>,
    /// Use a running server instead of an embedded one.
    #[arg(long, global = true, value_name = "URL")]
    pub server: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one session per profile and write its record.
    Session(SessionArgs),
    /// Run genuine and manipulated populations and report separation.
    Montecarlo(MonteCarloArgs),
    /// Measure per-challenge gaps against a pipeline and list qualified challenges.
    Qualify(QualifyArgs),
    /// Pick the threshold from a genuine population at a target false-positive rate.
    Calibrate(CalibrateArgs),
    /// Print version information.
    Version,
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    /// Pipeline to impersonate; repeatable. Default: genuine and ldfl.
    #[arg(long = "profile", value_name = "PROFILE")]
    pub pipelines: Vec<ProfileKind>,
    /// Participant index within the population.
    #[arg(long, default_value_t = 0)]
    pub participant: u64,
    /// Override the decision threshold.
    #[arg(long, value_name = "T")]
    pub threshold: Option<f64>,
    /// Calibration file from `gotcha calibrate`; supplies threshold and models.
    #[arg(long, value_name = "PATH")]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[arg(long)]
    pub n_genuine: Option<usize>,
    #[arg(long)]
    pub n_per_pipeline: Option<usize>,
    #[arg(long, value_name = "T")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct QualifyArgs {
    /// Minimum mean gap for a challenge to qualify, in (0, 1].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Fraction of genuine stability samples that must stay under epsilon, in (0, 1].
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, value_name = "PROFILE", default_value = "ldfl")]
    pub pipeline: ProfileKind,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Target false-positive rate, in (0, 1).
    #[arg(long)]
    pub fp_rate: Option<f64>,
    #[arg(long)]
    pub n_genuine: Option<usize>,
}
