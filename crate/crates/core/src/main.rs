use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use miramet::cli::{self, CurveKind};

#[derive(Parser)]
#[command(name = "miramet", version, about = "Mirror-descent meta-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meta-train from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Print derived theory constants as JSON.
    Constants {
        #[arg(long)]
        config: PathBuf,
        /// Assumed initial optimality gap for the convergence budget.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
    },
    /// Run invariant suites and print TAP lines.
    Selftest {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Emit plot-ready CSV from a run directory.
    Curve {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "per_k")]
        what: String,
    },
}

fn main() -> ExitCode {
    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (mut out, mut err) = (io::stdout(), io::stderr());
    let code = match args.command {
        Command::Train { config, seed, out: dir, resume } => {
            cli::cmd_train(&cli::TrainArgs { config, seed, out: dir, resume }, &mut out, &mut err)
        }
        Command::Constants { config, delta } => cli::cmd_constants(&config, delta, &mut out, &mut err),
        Command::Selftest { suite } => cli::cmd_selftest(&suite, &mut out, &mut err),
        Command::Curve { run, what } => match what.parse::<CurveKind>() {
            Ok(kind) => cli::cmd_curve(&run, kind, &mut out, &mut err),
            Err(e) => {
                eprintln!("error: {e}");
                cli::EXIT_CONFIG
            }
        },
    };
    ExitCode::from(code as u8)
}
