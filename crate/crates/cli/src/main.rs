//! `cpwatch`: change-point detection from the command line.
//!
//! Exit status is 0 on success, 1 when detection fails on the data, and 2 for
//! bad flags, config keys or parameter values.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod input;
mod settings;

use settings::UsageError;

#[derive(Parser, Debug)]
#[command(name = "cpwatch", version, about = "CUSUM change-point detection for metric streams")]
struct Cli {
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate (or look up) a critical value.
    Critval(CritvalArgs),
    /// Single change-point test over a series or a sub-range of it.
    Offline(OfflineArgs),
    /// Multiple change points by binary segmentation with validation.
    Segment(SegmentArgs),
    /// Sequential monitoring; one JSON line per detected change.
    Monitor(MonitorArgs),
    /// Trend direction at a given index.
    Trend(TrendArgs),
    /// DoS detection on a simulated grid network.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Config file of `key = value` lines; flags take precedence.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Write output here instead of stdout.
    #[arg(short, long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// RNG seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Where critical values come from.
#[derive(Args, Debug, Clone)]
pub struct McArgs {
    /// CSV table of precomputed critical values; no simulation is run.
    #[arg(long, value_name = "PATH")]
    pub critval_table: Option<PathBuf>,
    /// Monte-Carlo grid steps per path [default: 10000].
    #[arg(long)]
    pub mc_steps: Option<usize>,
    /// Monte-Carlo replications [default: 100000].
    #[arg(long)]
    pub mc_reps: Option<usize>,
    /// Simulation horizon of the ratio functional [default: 10].
    #[arg(long)]
    pub mc_horizon: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Input CSV; `-` reads standard input.
    #[arg(short, long, value_name = "PATH")]
    pub input: Option<String>,
    /// 0-based columns to read, comma-separated [default: all but a leading `t`].
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct CritvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mc: McArgs,
    /// offline, standard or ratio [default: offline].
    #[arg(long)]
    pub kind: Option<String>,
    /// Dimension of the monitored vector [default: 1].
    #[arg(long)]
    pub d: Option<usize>,
    /// Significance level [default: 0.05].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight exponent of online boundaries, in [0, 0.5) [default: 0].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Add the value to this CSV table, replacing an entry with the same key.
    #[arg(long, value_name = "PATH")]
    pub table_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OfflineArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mc: McArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Significance level [default: 0.05].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// First index tested, 1-based [default: 1].
    #[arg(long)]
    pub lo: Option<usize>,
    /// Last index tested, 1-based [default: series length].
    #[arg(long)]
    pub hi: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mc: McArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Significance level [default: 0.05].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Shortest segment that is split further [default: 20].
    #[arg(long)]
    pub min_seg: Option<usize>,
    /// Cap on validation passes [default: 10].
    #[arg(long)]
    pub max_rounds: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MacdArgs {
    /// Signal-line lag [default: 9].
    #[arg(long)]
    pub p1: Option<usize>,
    /// Fast EMA lag [default: 12].
    #[arg(long)]
    pub p2: Option<usize>,
    /// Slow EMA lag [default: 26].
    #[arg(long)]
    pub p3: Option<usize>,
    /// Samples summed after the anchor by the interval indicator [default: 10].
    #[arg(long)]
    pub h: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MonitorArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mc: McArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub macd: MacdArgs,
    /// Detector: standard or ratio [default: standard].
    #[arg(long)]
    pub detector: Option<String>,
    /// Significance level [default: 0.05].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight exponent, in [0, 0.5) [default: 0].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Minimum training length [default: 100].
    #[arg(long)]
    pub m: Option<usize>,
    /// Monitored samples per window [default: 100].
    #[arg(long)]
    pub window: Option<usize>,
    /// Samples skipped after a change before monitoring resumes [default: 25].
    #[arg(long)]
    pub quiet_gap: Option<usize>,
    /// Minimum segment length when locating the training block [default: 20].
    #[arg(long)]
    pub min_seg: Option<usize>,
    /// 0-based selected column fed to the trend indicator [default: 0].
    #[arg(long)]
    pub trend_dim: Option<usize>,
    /// Trend anchor: estimate or alarm [default: estimate].
    #[arg(long)]
    pub trend_anchor: Option<String>,
    /// Write a JSON run report (config, events, skipped windows) here.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Shell command run on each ScaleUp event. `{index}`, `{direction}`,
    /// `{action}`, `{ti}`, `{lo}` and `{hi}` are substituted.
    #[arg(long, value_name = "CMD")]
    pub on_scale_up: Option<String>,
    /// Shell command run on each ScaleDown event; same placeholders.
    #[arg(long, value_name = "CMD")]
    pub on_scale_down: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrendArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub macd: MacdArgs,
    /// 1-based index to evaluate at.
    #[arg(long)]
    pub index: Option<usize>,
    /// point or interval [default: interval].
    #[arg(long)]
    pub mode: Option<String>,
    /// Let the interval window stop at the series end.
    #[arg(long)]
    pub clamp: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mc: McArgs,
    /// Grid size as ROWSxCOLS [default: 10x10].
    #[arg(long)]
    pub grid: Option<String>,
    /// Number of attackers [default: 10].
    #[arg(long)]
    pub attackers: Option<usize>,
    /// Minimum hop distance between attackers [default: 3].
    #[arg(long)]
    pub spacing: Option<usize>,
    /// First attack period, 1-based [default: 300].
    #[arg(long)]
    pub start: Option<usize>,
    /// Periods simulated [default: 600].
    #[arg(long)]
    pub duration: Option<usize>,
    /// per-node or cluster [default: per-node].
    #[arg(long)]
    pub mode: Option<String>,
    /// Cluster block size as ROWSxCOLS in cluster mode [default: 2x2].
    #[arg(long)]
    pub cluster_block: Option<String>,
    /// Replications [default: 100].
    #[arg(long)]
    pub reps: Option<usize>,
    /// Initial training length [default: 200].
    #[arg(long)]
    pub m: Option<usize>,
    /// Samples monitored between retrainings [default: 50].
    #[arg(long)]
    pub retrain: Option<usize>,
    /// Weight exponent, in [0, 0.5) [default: 0].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Significance level [default: 0.05].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Write per-node detection probabilities as a ROWS x COLS CSV.
    #[arg(long, value_name = "PATH")]
    pub heatmap: Option<PathBuf>,
    /// Include every replication in the report.
    #[arg(long)]
    pub details: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Critval(a) => commands::critval(a),
        Command::Offline(a) => commands::offline(a),
        Command::Segment(a) => commands::segment(a),
        Command::Monitor(a) => commands::monitor(a),
        Command::Trend(a) => commands::trend(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
