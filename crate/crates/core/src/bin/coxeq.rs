use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coxeq::app::{self, Command, Overrides};
use coxeq::{Error, ScenarioConfig64};

#[derive(Parser)]
#[command(name = "coxeq", version, about = "Equilibrium prices and wealth around a Cox-process default")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stock jump at the origin for each recovery value, plus a price scan.
    CaseStudy(Common),
    /// Tabulates φ·g over the reversal grid and checks the reversal oracle.
    FigurePhig(Common),
    /// Relative wealth jumps, their ordering and the systemic measures.
    JumpWealth(Common),
    /// Market prices of risk by PDE and Monte Carlo, and the κ slope identity.
    Mpr(Common),
    /// Runs every oracle registered for the scenario.
    Validate(Common),
    /// Prices, jump, κ and market prices of risk over the (t, x) grid.
    Scan(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Forward and reversed path counts.
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::CaseStudy(c) => (Command::CaseStudy, c),
        Cmd::FigurePhig(c) => (Command::FigurePhig, c),
        Cmd::JumpWealth(c) => (Command::JumpWealth, c),
        Cmd::Mpr(c) => (Command::Mpr, c),
        Cmd::Validate(c) => (Command::Validate, c),
        Cmd::Scan(c) => (Command::Scan, c),
    };
    let overrides = Overrides {
        seed: common.seed,
        paths: common.paths,
        out_dir: common.out_dir,
    };
    let result = ScenarioConfig64::load(&common.config).and_then(|mut cfg| {
        overrides.apply(&mut cfg)?;
        let dir = overrides.out_dir(&cfg);
        app::run(command, &cfg, &dir).map(|o| (o, dir))
    });
    match result {
        Ok((outcome, dir)) => {
            for line in &outcome.notes {
                println!("{line}");
            }
            println!(
                "{} files in {} ({:.1} s)",
                outcome.manifest.outputs.len(),
                dir.display(),
                outcome.manifest.wall_clock_seconds
            );
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}: some checks failed", command.name());
                ExitCode::from(1)
            }
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
