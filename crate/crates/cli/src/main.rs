//! Command-line front end: run scenarios, sweep seeds, validate documents
//! and turn saved reports into plot-ready tables.

mod artifacts;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use artifacts::RunScalars;
use ifnet::engine::RunReport;
use ifnet::ScenarioConfig;

#[derive(Parser)]
#[command(name = "ifnet", version, about = "Simulate and adapt decentralized interference networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "IFNET_OUT", default_value = "out")]
        out: PathBuf,
        /// Overrides the seed in the document.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run independent replications with consecutive seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "IFNET_OUT", default_value = "out")]
        out: PathBuf,
        /// First seed; defaults to the document's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 8)]
        replications: u32,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a scenario document and print it with defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write plot-ready CSV tables from a run directory.
    Report {
        /// Directory holding a `report.json`.
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Invalid(String),
    Io(String),
}

impl Failure {
    fn io(context: &Path, e: impl std::fmt::Display) -> Self {
        Failure::Io(format!("{}: {e}", context.display()))
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let invalid = |e: ifnet::Error| Failure::Invalid(format!("{}: {e}", path.display()));
    let mut config = ifnet::parse(&text).map_err(invalid)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let config = config.resolved().map_err(invalid)?;
    config.validate().map_err(invalid)?;
    Ok(config)
}

fn simulate(config: &ScenarioConfig) -> Result<RunReport, Failure> {
    ifnet::run(config).map_err(|e| Failure::Invalid(e.to_string()))
}

fn run_one(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let config = load(config_path, seed)?;
    let report = simulate(&config)?;
    artifacts::write_run(out, &config, &report).map_err(|e| Failure::io(out, e))?;
    println!("{}", out.display());
    Ok(())
}

fn sweep(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    replications: u32,
    jobs: Option<usize>,
) -> Result<(), Failure> {
    let base = load(config_path, seed)?;
    let seeds: Vec<u64> = (0..replications as u64).map(|i| base.seed.wrapping_add(i)).collect();
    // validate every replication before any work is written
    let configs = seeds
        .iter()
        .map(|&s| load(config_path, Some(s)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| Failure::Io(e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
    let results: Vec<Result<(u64, RunScalars), Failure>> = pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, config)| {
                let report = simulate(config)?;
                let dir = out.join(format!("rep-{i:03}"));
                artifacts::write_run(&dir, config, &report).map_err(|e| Failure::io(&dir, e))?;
                Ok((config.seed, RunScalars::of(&report)))
            })
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    artifacts::write_sweep(out, &runs).map_err(|e| Failure::io(out, e))?;
    println!("{}", out.display());
    Ok(())
}

fn validate(config_path: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let config = load(config_path, seed)?;
    println!("{}", config.to_json());
    Ok(())
}

fn report(input: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let path = input.join(artifacts::REPORT);
    let text = fs::read_to_string(&path).map_err(|e| Failure::io(&path, e))?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| Failure::io(&path, e))?;
    let out = out.unwrap_or(input);
    artifacts::write_plots(out, &report).map_err(|e| Failure::io(out, e))?;
    println!("{}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out, seed } => run_one(config, out, *seed),
        Command::Sweep {
            config,
            out,
            seed,
            replications,
            jobs,
        } => sweep(config, out, *seed, *replications, *jobs),
        Command::Validate { config, seed } => validate(config, *seed),
        Command::Report { input, out } => report(input, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
