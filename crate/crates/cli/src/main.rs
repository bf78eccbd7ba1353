use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pw_traffic::experiment::{
    cmd_compare, cmd_decompose, cmd_limit, cmd_simulate, cmd_spectrum, ExperimentConfig, ExperimentError, Report,
};

/// Monte Carlo and exact traffic-distribution experiments.
#[derive(Debug, Parser)]
#[command(name = "pwtraffic", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo estimate of the configured traces.
    Simulate(Common),
    /// Exact limits and the odd-label identity check.
    Limit(Common),
    /// Y(h) against its Gaussian equivalent.
    Compare(Common),
    /// Eigenvalue histograms and moments of YYᵗ.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Prefix for `<prefix>_pw.csv` and `<prefix>_equivalent.csv`;
        /// defaults to `--out` without its extension, then `spectrum`.
        #[arg(long)]
        histograms: Option<PathBuf>,
    },
    /// Norms of the decomposition parts.
    Decompose(Common),
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Report destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, overriding the config.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn load(common: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut config = ExperimentConfig::from_path(&common.config)?;
    if common.threads.is_some() {
        config.threads = common.threads;
    }
    Ok(config)
}

fn emit(report: &Report, common: &Common) -> anyhow::Result<()> {
    let text = match common.format {
        Format::Json => report.to_json() + "\n",
        Format::Csv => report.to_csv()?,
    };
    match &common.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

type Runner = fn(&ExperimentConfig, Option<&Path>) -> Result<Report, ExperimentError>;

fn split(command: Command) -> (Common, Option<PathBuf>, Runner) {
    match command {
        Command::Simulate(c) => (c, None, |cfg, _| cmd_simulate(cfg)),
        Command::Limit(c) => (c, None, |cfg, _| cmd_limit(cfg)),
        Command::Compare(c) => (c, None, |cfg, _| cmd_compare(cfg)),
        Command::Decompose(c) => (c, None, |cfg, _| cmd_decompose(cfg)),
        Command::Spectrum { common, histograms } => {
            let prefix = histograms
                .or_else(|| common.out.as_deref().map(|p| p.with_extension("")))
                .unwrap_or_else(|| PathBuf::from("spectrum"));
            (common, Some(prefix), cmd_spectrum)
        }
    }
}

fn main() -> ExitCode {
    let (common, prefix, command) = split(Cli::parse().command);
    let config = match load(&common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match command(&config, prefix.as_deref()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_validation() { 2 } else { 1 });
        }
    };
    if let Err(e) = emit(&report, &common) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    for flag in &report.flags {
        eprintln!("flag: {flag}");
    }
    if report.flags.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}
