use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use critwave::checks::Which;
use critwave::commands::{cmd_audit, cmd_check, cmd_optimize, cmd_solve, exit_code, Outcome};
use critwave::config::RunConfig;
use critwave::Result;

#[derive(Parser)]
#[command(name = "critwave", version, about = "Sparse optimal control of the defocusing quintic wave equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file with dotted keys (TOML syntax).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.dir` of the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces one configuration entry, e.g. `--override cost.beta1=0.5`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Forward solve with the configured control.
    Solve(Common),
    /// Minimize the reduced cost and audit the result.
    Optimize(Common),
    /// Check first and second order conditions at a stored control.
    Audit(Common),
    /// Run a numerical self-check.
    Check {
        #[command(flatten)]
        common: Common,
        /// One of gradient, energy, prox, duality, psi, taylor.
        #[arg(long)]
        which: String,
    },
}

fn run(cli: Cli) -> Result<Outcome> {
    let (common, which) = match &cli.command {
        Command::Solve(c) | Command::Optimize(c) | Command::Audit(c) => (c, None),
        Command::Check { common, which } => (common, Some(which.parse::<Which>()?)),
    };
    let cfg = RunConfig::load(&common.config, &common.overrides)?;
    let dir = common.config.parent().map(PathBuf::from).unwrap_or_default();
    let out = common.out.as_deref();
    match cli.command {
        Command::Solve(_) => cmd_solve(cfg, &dir, out),
        Command::Optimize(_) => cmd_optimize(cfg, &dir, out),
        Command::Audit(_) => cmd_audit(cfg, &dir, out),
        Command::Check { .. } => cmd_check(cfg, &dir, out, which.expect("parsed above")),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
