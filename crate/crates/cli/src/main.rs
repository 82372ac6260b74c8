//! `sagd`: runs noise, spectrum, flow, score-identity, training and
//! omission experiments from a flat configuration.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "sagd", version, about = "Spectrally anisotropic Gaussian diffusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample shaped noise; writes the tensor and its radial spectrum.
    Noise(RunArgs),
    /// Radial spectrum of a stored tensor file (`input=<path>`).
    Rapsd(RunArgs),
    /// Probability-flow transport of particles to a 2D mixture.
    Flow(RunArgs),
    /// Score, Tweedie and small-noise identities against closed forms.
    ScoreCheck(RunArgs),
    /// Train the toy noise predictor on 2D Gaussian data.
    TrainToy(RunArgs),
    /// Selective omission of a corrupted frequency band.
    Omit(RunArgs),
    /// List configuration keys and defaults.
    Keys,
}

#[derive(Args)]
struct RunArgs {
    /// Config file of `key=value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run directory.
    #[arg(long, default_value = "sagd-run")]
    out: PathBuf,
    /// Shorthand for `--set seed=<u64>`.
    #[arg(long)]
    seed: Option<u64>,
}

fn resolve(name: &str, args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::defaults(name);
    if let Some(path) = &args.config {
        cfg.merge_file(path)?;
    }
    for pair in &args.set {
        cfg.assign(pair)?;
    }
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    type Runner = fn(&RunConfig, &std::path::Path) -> Result<(), CliError>;
    let (name, args, runner): (&str, &RunArgs, Runner) = match &cli.command {
        Command::Noise(a) => ("noise", a, commands::noise),
        Command::Rapsd(a) => ("rapsd", a, commands::rapsd_cmd),
        Command::Flow(a) => ("flow", a, commands::flow),
        Command::ScoreCheck(a) => ("score-check", a, commands::score_check),
        Command::TrainToy(a) => ("train-toy", a, commands::train_toy),
        Command::Omit(a) => ("omit", a, commands::omit),
        Command::Keys => {
            print!("{}", config::describe());
            return Ok(());
        }
    };
    let cfg = resolve(name, args)?;
    runner(&cfg, &args.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sagd: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
