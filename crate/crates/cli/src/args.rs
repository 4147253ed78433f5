use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "hetcon",
    version,
    about = "Distributed consensus synthesis and simulation for heterogeneous agents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the feedforward, LQ and observer gains and write them as JSON.
    Synthesize {
        scenario: PathBuf,
        #[arg(long, env = "HETCON_OUT_DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Simulate and export traces, reports and (with `all`) a comparison.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = RunMode::Distributed)]
        mode: RunMode,
        /// Overrides the scenario horizon.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, env = "HETCON_OUT_DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Run the invariant suite and print a pass/fail table.
    Verify {
        scenario: PathBuf,
        /// Seed for the randomized kernel suites.
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Also write the table as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RunMode {
    Distributed,
    Centralized,
    Baseline,
    All,
}
