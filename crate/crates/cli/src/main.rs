use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use dmfg_cli::{run, Command, Invocation, EXIT_ERROR};

/// Run a dmfg experiment described by a JSON config.
#[derive(Debug, Parser)]
#[command(name = "dmfg", version)]
struct Args {
    /// Subcommand; overrides `command` in the config.
    #[arg(value_enum)]
    command: Option<Command>,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's `output`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed(s).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    }
    let inv = Invocation {
        config: args.config,
        command: args.command,
        out: args.out,
        seed: args.seed,
    };
    match run(&inv) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
