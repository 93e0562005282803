mod artifact;
mod commands;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Radio environment map pipeline for platoon channel planning.
#[derive(Parser, Debug)]
#[command(name = "remplan", version, about)]
struct Cli {
    /// Worker threads for fitting and outage evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scenario (route, ground truth, χ batches or traces).
    Generate(GenerateArgs),
    /// Turn trace files into χ batches.
    Ingest(IngestArgs),
    /// Fit mixture models to χ batches, one REM entry per location.
    Fit(FitArgs),
    /// DBSCAN-compress a REM, or sweep the geographic radius.
    Cluster(ClusterArgs),
    /// Assign a channel to every route location.
    Plan(PlanArgs),
    /// Compare plan files as CSV.
    Report(ReportArgs),
    /// Re-check invariants and input hashes of artifact files.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Scenario spec, JSON or TOML.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Directory holding `*.manifest.json` traces.
    #[arg(long)]
    pub input: PathBuf,
    /// χ CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Mean-power CSV output (default: `mean_power.csv` next to `--out`).
    #[arg(long)]
    pub mean_power: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub dft_size: usize,
    #[arg(long, default_value_t = 64)]
    pub keep_center: usize,
    /// JSON/TOML file with `platoon` and/or `propagation` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// χ CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// REM JSON-lines output.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Fixed component count.
    #[arg(long, default_value_t = 5, conflicts_with = "select_max")]
    pub components: usize,
    /// Select the component count by AIC over 1..=N instead.
    #[arg(long)]
    pub select_max: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Drop raw χ samples from the REM.
    #[arg(long)]
    pub no_samples: bool,
    /// Mean-power CSV from `ingest`.
    #[arg(long)]
    pub mean_power: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// REM JSON-lines input.
    #[arg(long)]
    pub input: PathBuf,
    /// Compressed REM output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Input entries with their cluster labels.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub min_points: usize,
    /// Metres; `inf` disables the geographic predicate.
    #[arg(long, default_value_t = 400.0)]
    pub geo_radius_m: f64,
    #[arg(long, default_value_t = 0.05)]
    pub ks_alpha: f64,
    /// Fixed KS radius instead of the one derived from sample counts.
    #[arg(long)]
    pub ks_radius: Option<f64>,
    /// `a:b:step` in metres.
    #[arg(long)]
    pub sweep_geo_radius: Option<String>,
    /// CSV `eps_g,max_nn_m` for the sweep.
    #[arg(long, requires = "sweep_geo_radius")]
    pub sweep_out: Option<PathBuf>,
    /// Seed for refitting merged clusters.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Greedy,
    GreedyConstrained,
    Dijkstra,
    Bumblebee,
    Learning,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Greedy => "greedy",
            Algorithm::GreedyConstrained => "greedy-constrained",
            Algorithm::Dijkstra => "dijkstra",
            Algorithm::Bumblebee => "bumblebee",
            Algorithm::Learning => "learning",
        }
    }
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[arg(long)]
    pub rem: PathBuf,
    #[arg(long)]
    pub route: PathBuf,
    #[arg(long, value_enum)]
    pub algorithm: Algorithm,
    #[arg(long)]
    pub out: PathBuf,
    /// Outage cap (default: the config's max_outage).
    #[arg(long)]
    pub p_max: Option<f64>,
    #[arg(long, default_value_t = 400)]
    pub packet_bytes: usize,
    /// JSON/TOML file with `platoon` and/or `propagation` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Route locations farther than this from every entry are flagged extrapolated.
    #[arg(long, default_value_t = 400.0)]
    pub geo_radius_m: f64,
    /// Bumblebee start channel (default: lowest mean power at the first location).
    #[arg(long)]
    pub initial_channel: Option<u16>,
    #[arg(long, default_value_t = 0.3)]
    pub learning_alpha: f64,
    #[arg(long, default_value_t = 3.0)]
    pub reward_free: f64,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    pub reward_busy: f64,
    /// Time chunks of raw samples used as learning passes.
    #[arg(long, default_value_t = 10)]
    pub training_passes: usize,
    /// REM used for learning (default: `--rem`).
    #[arg(long)]
    pub training: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Algorithms to compare; reads `plan_<algorithm>.json` from `--plans-dir`.
    #[arg(long, value_delimiter = ',', required_unless_present = "plan")]
    pub compare: Vec<String>,
    #[arg(long, default_value = ".")]
    pub plans_dir: PathBuf,
    /// Explicit plan files (repeatable).
    #[arg(long)]
    pub plan: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-algorithm summary CSV (default: `<out>.summary.csv`).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Recompute optimal switch counts for plan files.
    #[arg(long)]
    pub oracle: bool,
    /// Config used to recompute outages for plans (`--rem`, `--route` needed too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rem: Option<PathBuf>,
    #[arg(long)]
    pub route: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Ingest(a) => commands::ingest(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Cluster(a) => commands::cluster(&a),
        Command::Plan(a) => commands::plan(&a),
        Command::Report(a) => commands::report(&a),
        Command::Validate(a) => validate::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
