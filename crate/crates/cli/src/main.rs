mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use treecast_core::scenario::CONFIG_KEYS;

fn config_help() -> String {
    let mut s = String::from("Config keys (section.key), each also settable by the matching flag where one exists:\n");
    for k in CONFIG_KEYS {
        s.push_str("  ");
        s.push_str(k);
        s.push('\n');
    }
    s.push_str("\nExit codes: 0 done, 1 runtime or I/O failure, 2 config error, 3 topology error, 4 instance too large");
    s
}

#[derive(Parser)]
#[command(name = "treecast", version, about = "Multicast tree scheduling simulator", after_long_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and export its metrics as CSV.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory for CSVs and the summary.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a scenario at several multiples of its max uniform rate.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Multipliers of λ*, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.9,0.995,1.1")]
        multipliers: Vec<f64>,
        /// Seeds, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Also write the table as CSV into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Standalone oracles.
    #[command(subcommand)]
    Oracle(Oracle),
}

#[derive(Subcommand)]
enum Oracle {
    /// Max uniform rate and a tree-rate allocation achieving it.
    Region {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Exact versus approximate min-cost trees for each session.
    Steiner {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Link costs, comma separated in link order (default: all zero).
        #[arg(long, value_delimiter = ',')]
        costs: Vec<f64>,
        /// Approximation level.
        #[arg(long, default_value_t = 2)]
        level: usize,
    },
    /// Replay an exported run against the Loynes backlog formula.
    Loynes {
        /// Directory written by `treecast run`.
        #[arg(long)]
        dir: PathBuf,
        /// Scenario hash prefix of the files (needed when several runs share the directory).
        #[arg(long)]
        hash: Option<String>,
    },
}

#[derive(Args, Clone, Debug)]
pub struct ScenarioArgs {
    /// Scenario config file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub slots: Option<usize>,
    /// alg1 (regulated) or alg2 (randomized).
    #[arg(long)]
    pub algorithm: Option<String>,
    /// exact, approx-level-<n> or random.
    #[arg(long)]
    pub selector: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub eps1: Option<f64>,
    #[arg(long)]
    pub eps2: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub control_delay: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, out } => commands::run(&scenario, &out),
        Command::Sweep { scenario, multipliers, seeds, parallel, out } => {
            commands::sweep(&scenario, &multipliers, &seeds, parallel, out.as_deref())
        }
        Command::Oracle(Oracle::Region { scenario }) => commands::region(&scenario),
        Command::Oracle(Oracle::Steiner { scenario, costs, level }) => commands::steiner(&scenario, &costs, level),
        Command::Oracle(Oracle::Loynes { dir, hash }) => commands::loynes(&dir, hash.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("treecast: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
