use std::path::PathBuf;
use std::process::ExitCode;

use bmms_cli::commands;
use bmms_cli::config::{FitConfig, Overrides, PredictConfig, RawConfig, SimulateConfig, SummarizeConfig};
use bmms_cli::CliResult;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bmms", version, about = "Bayesian modular multiscale regression")]
struct Cli {
    /// Key-value config file (TOML syntax).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    chains: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Skip the SVG figure.
    #[arg(long, global = true)]
    no_figures: bool,
    /// Binary response with a probit link.
    #[arg(long, global = true)]
    probit: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a simulated design, response and true coefficients.
    Simulate,
    /// Run the modular sampler and write draws, summaries and a figure.
    Fit,
    /// Predict from a stored fit.
    Predict,
    /// Tabulate error metrics and the RSS ladder of a stored fit.
    Summarize,
}

fn run(cli: Cli) -> CliResult<()> {
    let overrides = Overrides {
        seed: cli.seed,
        chains: cli.chains,
        out: cli.out,
        no_figures: cli.no_figures,
        probit: cli.probit,
    };
    let raw = RawConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate(&SimulateConfig::from_raw(&raw)?),
        Command::Fit => commands::fit(&FitConfig::from_raw(&raw)?).map(|_| ()),
        Command::Predict => commands::predict(&PredictConfig::from_raw(&raw)?),
        Command::Summarize => commands::summarize(&SummarizeConfig::from_raw(&raw)?),
    }
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
        Err(e) => {
            eprintln!("bmms: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
