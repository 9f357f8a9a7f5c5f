use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use evoloco_core::evolution::SeedMode;
use evoloco_core::orchestrator::{run_experiment, ConfigError, Preset, RunConfig, RunError, RunOptions, Stage};

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "evoloco", version, about = "Evolve walking morphologies with per-agent PPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML file layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Continue a run whose previous session died.
    #[arg(long, global = true)]
    resume: bool,
    /// Mix the wall clock into slot seeds and sample live tournament pools.
    #[arg(long, global = true)]
    wall_clock_seeds: bool,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Create the run directory and registry.
    Init,
    /// Train the initial population.
    Train,
    /// Run tournaments until the generation cap.
    Evolve,
    /// Write lineage, diversity and learning-curve reports.
    Analyze,
    /// All stages in order.
    Run,
}

#[derive(ValueEnum, Clone, Copy)]
enum PresetArg {
    Desk,
    Paper,
}

fn resolve(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let base = RunConfig::preset(match cli.preset {
        Some(PresetArg::Paper) => Preset::Paper,
        _ => Preset::Desk,
    });
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.clone(), e))?;
            RunConfig::from_toml_over(&base, &text)?
        }
        None => base,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = std::env::var_os("EVOLOCO_OUT") {
        config.output_dir = PathBuf::from(out);
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let config = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if cli.dump_config {
        print!("{}", config.to_toml());
        return ExitCode::SUCCESS;
    }
    let stages = match cli.command {
        Command::Init => vec![Stage::Init],
        Command::Train => vec![Stage::Train],
        Command::Evolve => vec![Stage::Evolve],
        Command::Analyze => vec![Stage::Analyze],
        Command::Run => Stage::ALL.to_vec(),
    };
    let options = RunOptions {
        stages,
        resume: cli.resume,
        seed_mode: if cli.wall_clock_seeds { SeedMode::WallClock } else { SeedMode::Deterministic },
        ..RunOptions::default()
    };
    match run_experiment(&config, &options) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(RunError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_STAGE)
        }
    }
}
