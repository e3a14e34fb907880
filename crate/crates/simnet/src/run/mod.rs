//! The five subcommands. Each writes its artifacts into an output directory and
//! returns the acceptance checks it evaluated.

mod fed;
mod fusion;
mod hparam;
mod link;
mod transfer;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qv2x::codec::{CodecModel, ConvAnsatz};

pub use fed::{partition, run_fed, FedOutcome};
pub use fusion::{run_fusion_demo, FusionOutcome};
pub use hparam::{run_repro_hparam, CellResult, HparamOutcome};
pub use link::{run_semantic_link, LinkOutcome, SnrPoint};
pub use transfer::{run_transfer, TransferOutcome, TICK_PHASES};

use crate::artifact::{Artifacts, RunLog};
use crate::config::ScenarioConfig;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    ReproHparam,
    SemanticLink,
    Transfer,
    Fed,
    FusionDemo,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::ReproHparam,
        Command::SemanticLink,
        Command::Transfer,
        Command::Fed,
        Command::FusionDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::ReproHparam => "repro-hparam",
            Command::SemanticLink => "semantic-link",
            Command::Transfer => "transfer",
            Command::Fed => "fed",
            Command::FusionDemo => "fusion-demo",
        }
    }
}

/// One acceptance property evaluated by a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub command: Command,
    pub config_hash: String,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs one subcommand into `out`.
pub fn run(command: Command, cfg: &ScenarioConfig, out: &Path) -> Result<RunReport> {
    let checks = match command {
        Command::ReproHparam => run_repro_hparam(cfg, out)?.checks,
        Command::SemanticLink => run_semantic_link(cfg, out)?.checks,
        Command::Transfer => run_transfer(cfg, out)?.checks,
        Command::Fed => run_fed(cfg, out)?.checks,
        Command::FusionDemo => run_fusion_demo(cfg, out)?.checks,
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(out)
        .map_err(|e| crate::error::SimError::io(out, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    files.sort();
    Ok(RunReport {
        command,
        config_hash: cfg.hash(),
        checks,
        files,
    })
}

pub(crate) fn codec_model(cfg: &ScenarioConfig) -> Result<CodecModel> {
    Ok(CodecModel::init(
        ConvAnsatz::default(),
        cfg.codec.latent_wires.clone(),
        cfg.seed,
    )?)
}

/// Writes `summary.txt`, the run log and returns the checks.
pub(crate) fn finish(
    artifacts: &mut Artifacts,
    log: &RunLog,
    title: &str,
    lines: &[String],
    checks: &[Check],
) -> Result<()> {
    let mut body = format!("{title}\n");
    for l in lines {
        let _ = writeln!(body, "{l}");
    }
    if !checks.is_empty() {
        body.push_str("checks:\n");
        for c in checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(body, "  [{mark}] {}: {}", c.name, c.detail);
        }
    }
    artifacts.text("summary.txt", &body)?;
    log.write(artifacts)?;
    Ok(())
}
