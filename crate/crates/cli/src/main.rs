mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, result) = match &cli.command {
        Command::Simulate(a) => ("simulate", commands::simulate(a)),
        Command::Fit(a) => ("fit", commands::fit(a)),
        Command::Ppd(a) => ("ppd", commands::ppd(a)),
        Command::Ppc(a) => ("ppc", commands::ppc(a)),
        Command::Stability(a) => ("stability", commands::stability(a)),
        Command::Preprocess(a) => ("preprocess", commands::preprocess(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dncb {name}: {e:#}");
            ExitCode::FAILURE
        }
    }
}
