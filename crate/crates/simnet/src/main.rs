use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use simnet::{run, Command, ScenarioConfig, SimError};

/// Exit code when `--check` is given and an acceptance check fails.
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "simnet",
    version,
    about = "Quantum-enhanced V2X network simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Learning-rate, optimizer and batch-size sweep of the semantic codec.
    ReproHparam(RunArgs),
    /// Codec features over fading channels: distortion sweep and per-RSU traces.
    SemanticLink(RunArgs),
    /// Actor-critic transfer policy on the fixture MDP and the vehicle scenario.
    Transfer(RunArgs),
    /// Low-rank secure federated rounds against dense FedAvg.
    Fed(RunArgs),
    /// Camera/lidar alignment, patching and reversible fusion on random scenes.
    FusionDemo(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 4 when an acceptance check fails.
    #[arg(long)]
    check: bool,
}

fn execute(command: Command, args: RunArgs) -> Result<ExitCode, SimError> {
    let mut cfg = ScenarioConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| SimError::Config("no output directory: pass --out or set `out`".into()))?;
    let report = run(command, &cfg, &out)?;
    println!(
        "{} config_hash={} out={}",
        command.name(),
        report.config_hash,
        out.display()
    );
    for c in &report.checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        println!("[{mark}] {}: {}", c.name, c.detail);
    }
    if args.check && !report.all_passed() {
        return Ok(ExitCode::from(EXIT_CHECK_FAILED));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::ReproHparam(a) => (Command::ReproHparam, a),
        Sub::SemanticLink(a) => (Command::SemanticLink, a),
        Sub::Transfer(a) => (Command::Transfer, a),
        Sub::Fed(a) => (Command::Fed, a),
        Sub::FusionDemo(a) => (Command::FusionDemo, a),
    };
    match execute(command, args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("simnet {}: {e}", command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
