//! Command-line front end: scenario files in, traces and reports out.

pub mod args;
pub mod commands;
pub mod export;

use std::process::ExitCode;

use anyhow::Result;

pub use args::{Cli, Command, RunMode};
pub use commands::{
    cmd_run, cmd_synthesize, cmd_verify, load_scenario, RunOutcome, RunReport, VerifyReport,
};

/// Executes one parsed command, printing human-readable output.
pub fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synthesize { scenario, out } => {
            commands::ensure_out_dir(&out)?;
            let r = cmd_synthesize(&scenario, &out)?;
            commands::print_summary(&r.scenario, &r.synthesis);
            for f in &r.files {
                println!("  wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            scenario,
            mode,
            horizon,
            out,
        } => {
            commands::ensure_out_dir(&out)?;
            let o = cmd_run(&scenario, mode, horizon, &out)?;
            if let Some(first) = o.reports.first() {
                commands::print_summary(&first.scenario, &first.synthesis);
            }
            for r in &o.reports {
                commands::print_run(r);
            }
            if let Some(c) = &o.comparison {
                commands::print_comparison(c);
            }
            if let Some(p) = &o.comparison_path {
                println!("  wrote {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            scenario,
            seed,
            json,
        } => {
            let r = cmd_verify(&scenario, seed)?;
            commands::print_verify(&r);
            if let Some(p) = json {
                export::write_json(&p, &r)?;
            }
            Ok(if r.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
