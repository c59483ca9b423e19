use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use v2xmp::config::{ConfigFile, Overrides, RunConfig};
use v2xmp::output::{self, Artifacts};
use v2xmp::{runner, Result};

/// Joint lane-change motion planning and uplink power control under imperfect CSI.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the first planning window from the initial state.
    Solve(Flags),
    /// Simulate one lane change.
    Trial(Flags),
    /// Estimate collision ratios over many trials, optionally across a parameter sweep.
    Montecarlo(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed for every random draw.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte Carlo trials per policy and sweep value.
    #[arg(long)]
    trials: Option<usize>,
    /// Planning policy: proposed, no-uncertainty or const-power.
    #[arg(long)]
    policy: Option<String>,
    /// Comma-separated policies to run on shared seeds.
    #[arg(long, value_delimiter = ',')]
    compare: Option<Vec<String>>,
    /// Parameter sweep as KEY=START:STOP:STEP, with KEY one of beta, lv-speed, budget-dbm.
    #[arg(long)]
    sweep: Option<String>,
    /// Maximum worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Re-planning mode: oneshot or receding.
    #[arg(long)]
    mode: Option<String>,
    /// Position error model: sampled or worst-case.
    #[arg(long)]
    error_model: Option<String>,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            trials: self.trials,
            policy: self.policy.clone(),
            compare: self.compare.clone(),
            sweep: self.sweep.clone(),
            jobs: self.jobs,
            out: self.out.clone(),
            mode: self.mode.clone(),
            error_model: self.error_model.clone(),
        }
    }

    fn resolve(&self) -> Result<(RunConfig, Overrides)> {
        let mut file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let overrides = self.overrides();
        overrides.apply(&mut file);
        Ok((RunConfig::resolve(&file)?, overrides))
    }
}

fn execute(command: &Command) -> Result<(Artifacts, PathBuf)> {
    let (artifacts, run) = match command {
        Command::Solve(flags) => {
            let (run, overrides) = flags.resolve()?;
            (output::solve_artifacts(&run, &overrides, &runner::solve(&run)?)?, run)
        }
        Command::Trial(flags) => {
            let (run, overrides) = flags.resolve()?;
            (output::trial_artifacts(&run, &overrides, &runner::trial(&run)?)?, run)
        }
        Command::Montecarlo(flags) => {
            let (run, overrides) = flags.resolve()?;
            (output::montecarlo_artifacts(&run, &overrides, &runner::monte_carlo(&run)?)?, run)
        }
    };
    Ok((artifacts, run.out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = execute(&cli.command).and_then(|(artifacts, out)| artifacts.write(&out));
    match result {
        Ok(paths) => {
            for path in paths {
                eprintln!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            println!("{}", output::error_json(&err));
            ExitCode::from(2)
        }
    }
}
