//! `lorahop` command line: airtime calculator, network planner and simulator.

mod error;
mod plan;
mod scenario_file;
mod simulate;
mod toa;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "lorahop", version, about = "Multi-hop TDMA over LoRa: airtime, planning and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time on air of one LoRa frame.
    Toa(toa::ToaArgs),
    /// Dimensions a network and checks capacity and duty cycle.
    Plan(plan::PlanArgs),
    /// Runs a scenario and writes CSV traces plus a summary.
    Simulate(simulate::SimulateArgs),
}

fn fail(err: &CliError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Toa(args) => toa::run(args).map(|s| (s, None)),
        Command::Plan(args) => plan::run(args),
        Command::Simulate(args) => simulate::run(args).map(|s| (s, None)),
    };
    match result {
        Ok((text, infeasible)) => {
            println!("{}", text.trim_end());
            infeasible.as_ref().map_or(ExitCode::SUCCESS, fail)
        }
        Err(err) => fail(&err),
    }
}
