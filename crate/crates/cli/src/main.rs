use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use transduction::protocol::Engine;
use transduction_cli::config::Experiment;
use transduction_cli::{parse_config, run, CliError};

/// Qubit-to-optical transduction simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Conditional displacement of the phonon or magnon.
    Encode(Args),
    /// Beam-splitter readout of both branches.
    Transfer(Args),
    /// Phase-space maps of the encoded states.
    Wigner(Args),
    /// Encoding, transfer and photon-counting discrimination.
    Protocol(Args),
    /// Protocol figures of merit over a grid of one or two parameters.
    Sweep(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured engine.
    #[arg(long)]
    engine: Option<Engine>,
    /// Log errors only.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match cli.command {
        Command::Encode(a) => (Experiment::Encode, a),
        Command::Transfer(a) => (Experiment::Transfer, a),
        Command::Wigner(a) => (Experiment::Wigner, a),
        Command::Protocol(a) => (Experiment::Protocol, a),
        Command::Sweep(a) => (Experiment::Sweep, a),
    };
    let level = if args.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(experiment, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(experiment: Experiment, args: &Args) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let mut config = parse_config(&text)?;
    if config.experiment != experiment {
        return Err(CliError::config(
            "experiment",
            format!("configuration is for `{}`, not `{experiment}`", config.experiment),
        ));
    }
    if let Some(engine) = args.engine {
        log::info!("engine override: {engine}");
        config.engine = Some(engine);
        config.validate()?;
    }
    let out = match (&args.out, &config.output) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => PathBuf::from(dir),
        (None, None) => return Err(CliError::config("output", "missing; set it or pass --out")),
    };
    let manifest = run(&config, &out)?;
    log::info!(
        "{} file(s) in {} after {:.2} s",
        manifest.files.len(),
        out.display(),
        manifest.duration_s
    );
    Ok(())
}
