use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cqfb_cli::commands::{self, parse_list, Failure, Outcome, Overrides};

#[derive(Parser)]
#[command(name = "cqfb", version, about = "Coherent feedback scenarios: simulate, sweep, certify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed for randomized initial states and norm estimates.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV, report and plot files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    tol_rel: Option<f64>,
    #[arg(long, global = true)]
    tol_abs: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and compare its plateau with the certified bound.
    Run { config: PathBuf },
    /// Run the scenario for several gains.
    Sweep {
        config: PathBuf,
        /// Comma-separated gains, e.g. `0,5,10,15,20`.
        #[arg(long)]
        gamma: Option<String>,
    },
    /// Check the protocol hypotheses and print the certificate.
    Certify { config: PathBuf },
    /// Convergence of piecewise-constant interactions.
    Discretize {
        config: PathBuf,
        /// Comma-separated cell counts, e.g. `16,32,64,128`.
        #[arg(long)]
        cells: Option<String>,
    },
}

fn dispatch(cli: Cli) -> Result<Outcome, Failure> {
    let o = Overrides {
        seed: cli.seed,
        out: cli.out,
        tol_rel: cli.tol_rel,
        tol_abs: cli.tol_abs,
    };
    match cli.command {
        Command::Run { config } => commands::run(&config, &o),
        Command::Sweep { config, gamma } => {
            let gammas = gamma.map(|g| parse_list(&g, "gamma")).transpose()?;
            commands::sweep_cmd(&config, gammas, &o)
        }
        Command::Certify { config } => commands::certify_cmd(&config, &o),
        Command::Discretize { config, cells } => {
            let cells = cells.map(|c| parse_list(&c, "cells")).transpose()?;
            commands::discretize_cmd(&config, cells, &o)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            ExitCode::from(if outcome.pass { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
