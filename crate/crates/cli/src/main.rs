//! `dhps`: run attack scenarios, reproduce the analysis tables, validate by
//! Monte Carlo, compare countermeasures and meter device traffic.
//!
//! Exit codes: 0 success, 1 I/O or internal error, 2 attack failure,
//! 3 configuration error, 4 analysis infeasible.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CountermeasureConfig, Failure, Phase, TrafficConfig};
use output::{sha256_hex, Format, Output, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "dhps", version, about = "Double-hash port selection tracking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; overrides the configuration's seed where one applies.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Monte Carlo trials, or seeds for countermeasure comparisons.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the two-phase attack described by a scenario file.
    Attack,
    /// Termination table and population summary.
    Tables {
        #[arg(long, default_value_t = 256)]
        table_size: usize,
        #[arg(long, default_value_t = 1_000_000)]
        population: u64,
        #[arg(long, default_value_t = 1.0)]
        c_star: f64,
    },
    /// Simulated stopping-time distributions against the exact ones.
    Montecarlo {
        #[arg(long, value_enum, default_value = "phase1")]
        phase: Phase,
        #[arg(long, default_value_t = 256)]
        table_size: usize,
        /// Devices per simulated population (phase2).
        #[arg(long, default_value_t = 100)]
        population: u64,
        #[arg(long, default_value_t = 1.0)]
        c_star: f64,
    },
    /// Attack outcome under kernel mitigations versus the baseline.
    Countermeasures,
    /// Count a device's connections between polls.
    Traffic,
    /// Random-increments wrap bound and its entropy.
    Alg5 {
        /// Maximum segment lifetime in seconds.
        #[arg(long, default_value_t = 30.0)]
        msl: f64,
        /// Connections per second.
        #[arg(long, default_value_t = 11.4)]
        rate: f64,
        /// Size of the ephemeral port range.
        #[arg(long, default_value_t = 28232.0)]
        range: f64,
    },
}

fn name(c: &Command) -> &'static str {
    match c {
        Command::Attack => "attack",
        Command::Tables { .. } => "tables",
        Command::Montecarlo { .. } => "montecarlo",
        Command::Countermeasures => "countermeasures",
        Command::Traffic => "traffic",
        Command::Alg5 { .. } => "alg5",
    }
}

fn required_config(cli: &Cli) -> Result<&PathBuf, Failure> {
    cli.config.as_ref().ok_or_else(|| Failure::Config(anyhow::anyhow!("--config is required for {}", name(&cli.command))))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut out = Output::new(&cli.out, cli.format)?;
    let mut seed = cli.seed;
    match &cli.command {
        Command::Attack => {
            let mut scenario: dhps::simnet::Scenario = commands::read_config(required_config(cli)?)?;
            if let Some(s) = cli.seed {
                scenario.seed = s;
            }
            seed = Some(scenario.seed);
            // Outputs exist even when the attack fails; the manifest follows.
            let r = commands::attack(scenario, &mut out);
            finish(cli, seed, out)?;
            return r;
        }
        Command::Tables { table_size, population, c_star } => commands::tables(*table_size, *population, *c_star, &mut out)?,
        Command::Montecarlo { phase, table_size, population, c_star } => {
            let s = cli.seed.ok_or_else(|| Failure::Config(anyhow::anyhow!("--seed is required for montecarlo")))?;
            let trials = cli.trials.unwrap_or(10_000);
            commands::montecarlo(*phase, *table_size, trials, s, *population, *c_star, &mut out)?
        }
        Command::Countermeasures => {
            let cfg = match &cli.config {
                Some(p) => commands::read_config::<CountermeasureConfig>(p)?,
                None => {
                    let s = cli.seed.ok_or_else(|| Failure::Config(anyhow::anyhow!("--seed or --config is required")))?;
                    CountermeasureConfig::standard(s, cli.trials.unwrap_or(10))
                }
            };
            seed = Some(cfg.base.seed);
            out.json("config.json", &cfg)?;
            commands::countermeasures(&cfg, &mut out)?
        }
        Command::Traffic => {
            let mut cfg: TrafficConfig = commands::read_config(required_config(cli)?)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            seed = Some(cfg.seed);
            commands::traffic(&cfg, &mut out)?
        }
        Command::Alg5 { msl, rate, range } => commands::alg5(*msl, *rate, *range, &mut out)?,
    }
    finish(cli, seed, out)
}

fn finish(cli: &Cli, seed: Option<u64>, out: Output) -> Result<(), Failure> {
    let config_sha256 = match &cli.config {
        Some(p) => Some(sha256_hex(&std::fs::read(p).map_err(|e| Failure::Config(e.into()))?)),
        None => None,
    };
    let manifest = RunManifest {
        command: name(&cli.command).into(),
        argv: std::env::args().skip(1).collect(),
        config_path: cli.config.clone(),
        config_sha256,
        seed,
        out_dir: out.dir().to_path_buf(),
        files: Vec::new(),
    };
    out.finish(manifest)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
