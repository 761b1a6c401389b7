mod commands;
mod figures;
mod files;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Vessel centreline tracing: phantoms, proposals, snakes, trees, metrics.
#[derive(Parser)]
#[command(name = "snaketrace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set tau=0.4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom: volume, ground-truth traces, distance map.
    Phantom {
        /// Phantom spec as `key = value` lines; defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Threshold, thin and split a distance map into initial curves.
    Propose {
        /// Distance map (DVOL).
        #[arg(long, required_unless_present = "gt")]
        map: Option<PathBuf>,
        /// Ground-truth traces to build the distance map from (needs --volume).
        #[arg(long, requires = "volume")]
        gt: Option<PathBuf>,
        #[arg(long)]
        volume: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trace initial curves as snakes.
    Trace {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        curves: PathBuf,
        /// Ground truth for the oracle predictor.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Connect traced snakes into a loop-free tree.
    Tree {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predicted trace file against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// CSV report; the summary goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Propose, trace, build the tree and evaluate in one run.
    Pipeline(commands::PipelineArgs),
    /// Serve analytic predictions over stdin/stdout (external predictor protocol).
    #[command(hide = true)]
    PredictorServer {
        #[arg(long, default_value = "bright")]
        polarity: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Phantom { spec, set, out } => commands::phantom(spec.as_deref(), &set, &out),
        Command::Propose {
            map,
            gt,
            volume,
            config,
            out,
        } => commands::propose(map.as_deref(), gt.as_deref(), volume.as_deref(), &config, &out),
        Command::Trace {
            volume,
            curves,
            gt,
            config,
            out,
        } => commands::trace(&volume, &curves, gt.as_deref(), &config, &out),
        Command::Tree {
            volume,
            traces,
            config,
            out,
        } => commands::tree(&volume, &traces, &config, &out),
        Command::Eval { pred, gt, config, out } => commands::eval(&pred, &gt, &config, out.as_deref()),
        Command::Pipeline(args) => commands::pipeline(&args),
        Command::PredictorServer { polarity } => commands::predictor_server(&polarity),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
