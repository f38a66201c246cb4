use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kinetic_cli::{parse_config, run_scenario, CliError, RunMode, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "kmx", version, about = "Boltzmann perturbation runs, inequality constants and kernel checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,
    /// Single worker, sequential loops.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed (overrides the config).
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Run the mode named in `run.mode`.
    Run,
    Picard,
    Lemmas,
    Kernel,
    Bench,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kmx: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config(vec!["--config PATH is required".into()]))?;
    let mut cfg = parse_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.data.seed = seed;
    }
    match cli.command {
        Command::Run => {}
        Command::Picard => cfg.run.mode = RunMode::Picard,
        Command::Lemmas => cfg.run.mode = RunMode::Lemmas,
        Command::Kernel => cfg.run.mode = RunMode::Kernel,
        Command::Bench => cfg.run.mode = RunMode::Bench,
    }
    let opts = RunOptions {
        out: cli.out.clone(),
        threads: cli.threads,
        deterministic: cli.deterministic,
    };
    run_scenario(&cfg, &opts)?;
    Ok(())
}
