use std::process::ExitCode;

use clap::Parser;

use ufgkit::Command;

/// Symbolic UFG checks and Monte Carlo decay-rate estimates for Stratonovich SDEs.
#[derive(Parser)]
#[command(name = "ufgkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match ufgkit::run(&cli.command) {
        Ok(outcome) => {
            for v in &outcome.report.verdicts {
                println!(
                    "{}: {} ({})",
                    v.check,
                    if v.pass { "PASS" } else { "FAIL" },
                    v.detail
                );
            }
            println!(
                "report: {}",
                cli.command.args().out.join("report.json").display()
            );
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
