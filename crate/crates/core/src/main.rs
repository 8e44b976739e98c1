use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use modlab::experiment::{run, write_outputs, Command, ExperimentConfig};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Modulus,
    VerifyRing,
    Bound,
    Loewner,
    Qed,
    Converge,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Modulus => Command::Modulus,
            Cmd::VerifyRing => Command::VerifyRing,
            Cmd::Bound => Command::Bound,
            Cmd::Loewner => Command::Loewner,
            Cmd::Qed => Command::Qed,
            Cmd::Converge => Command::Converge,
        }
    }
}

/// Discrete modulus experiments: ring inequalities, distance bounds,
/// Loewner/QED constants and convergence probes.
#[derive(Parser, Debug)]
#[command(name = "modlab", version)]
struct Cli {
    command: Cmd,
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides `threads` in the config).
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(cli: &Cli) -> Result<bool> {
    let mut cfg = ExperimentConfig::load(&cli.config).with_context(|| format!("loading {}", cli.config.display()))?;
    let wanted: Command = cli.command.into();
    anyhow::ensure!(
        cfg.command == wanted,
        "config {} describes `{}`, not `{}`",
        cli.config.display(),
        cfg.command.name(),
        wanted.name()
    );
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.threads {
        anyhow::ensure!(t > 0, "--threads must be at least 1");
        cfg.threads = Some(t);
    }
    let out = cli.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let outcome = run(&cfg).with_context(|| format!("running `{}`", wanted.name()))?;
    write_outputs(&out, &outcome)?;
    print!("{}", outcome.summary);
    println!("outputs in {}", out.display());
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
