use std::path::PathBuf;

use clap::{Parser, Subcommand};
use dmcis_cli::{
    cmd_report, cmd_run, cmd_sweep, cmd_validate, resolve_seed, ReportArgs, RunArgs, SweepArgs,
};

#[derive(Parser)]
#[command(name = "dmcis", version, about = "Four-tier disaster communication simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a scenario file against the deployment rules
    Validate {
        /// Scenario JSON file
        scenario: PathBuf,
    },
    /// Simulate a scenario and write its trace and metrics
    Run {
        /// Scenario JSON file
        scenario: PathBuf,
        /// Override the scenario seed (beats DMCIS_SEED)
        #[arg(long)]
        seed: Option<u64>,
        /// Stop the clock early, in seconds
        #[arg(long)]
        until: Option<f64>,
        /// Write the event trace here as JSON Lines
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write metrics JSON here, plus a CSV twin with a .csv extension
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Rerun one scenario across parameter values and seeds
    Sweep {
        /// Scenario JSON file
        scenario: PathBuf,
        /// Scenario field to vary, e.g. params.contact_tick or maps.count
        #[arg(long)]
        param: String,
        /// Comma-separated values to try
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Runs per value
        #[arg(long, default_value_t = 1)]
        seeds: u32,
        /// Master seed for deriving per-cell seeds (beats DMCIS_SEED)
        #[arg(long)]
        seed: Option<u64>,
        /// Write the sweep CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics from a stored trace
    Report {
        /// Trace JSON Lines file from a previous run
        #[arg(long)]
        trace: PathBuf,
        /// Scenario the trace was produced from
        #[arg(long)]
        scenario: PathBuf,
        /// Write metrics JSON here (plus a .csv twin) instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let env_seed = std::env::var("DMCIS_SEED").ok();

    let result = match cli.cmd {
        Cmd::Validate { scenario } => cmd_validate(&scenario),
        Cmd::Run { scenario, seed, until, trace, metrics } => {
            resolve_seed(seed, env_seed.as_deref()).and_then(|seed| {
                cmd_run(&RunArgs { scenario, seed, until, trace, metrics })
            })
        }
        Cmd::Sweep { scenario, param, values, seeds, seed, out } => {
            resolve_seed(seed, env_seed.as_deref()).and_then(|seed| {
                cmd_sweep(&SweepArgs { scenario, param, values, seeds, seed, out })
            })
        }
        Cmd::Report { trace, scenario, out } => cmd_report(&ReportArgs { trace, scenario, out }),
    };

    match result {
        Ok(stdout) => print!("{stdout}"),
        Err(err) => {
            eprintln!("{err}");
            std::process::exit(err.exit_code());
        }
    }
}
