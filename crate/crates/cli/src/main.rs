mod commands;
mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use skim_core::SolverKind;

use commands::{Command, Failure};
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "skim",
    version,
    about = "Synthesize spiking pattern detectors by solving dendrite-to-soma weights"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config solver (batch or online).
    #[arg(long, global = true, value_parser = parse_solver)]
    solver: Option<SolverKind>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate the embedded-pattern task, train, test and write every artifact.
    Demo,
    /// Train a network and write it as JSON.
    Train,
    /// Score a trained network and write metrics and traces.
    Test,
    /// Prune a trained network and re-solve its output weights.
    Prune,
    /// Print the kernel catalog with parameter ranges.
    Kernels,
}

fn parse_solver(s: &str) -> Result<SolverKind, String> {
    s.parse().map_err(|e: skim_core::SkimError| e.to_string())
}

fn load_config(cli: &Cli) -> Result<RunConfig, Vec<String>> {
    let mut cfg = match &cli.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| vec![format!("config: {}: {e}", path.display())])?;
            serde_json::from_str(&text)
                .map_err(|e| vec![format!("config: {}: {e}", path.display())])?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(solver) = cli.solver {
        cfg.training.solver = solver;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli).map_err(Failure::Invalid)?;
    let command = match cli.command {
        Cmd::Kernels => {
            print!("{}", commands::kernels(&cfg));
            return Ok(());
        }
        Cmd::Demo => Command::Demo,
        Cmd::Train => Command::Train,
        Cmd::Test => Command::Test,
        Cmd::Prune => Command::Prune,
    };
    commands::plan(cfg, command)
        .map_err(Failure::Invalid)?
        .execute()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(problems)) => {
            eprintln!(
                "invalid configuration ({} problem{}):",
                problems.len(),
                if problems.len() == 1 { "" } else { "s" }
            );
            for p in problems {
                eprintln!("  {p}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
