use std::path::{Path, PathBuf};

use num_complex::Complex64;
use qv2x::channel::{ChannelDynamics, ChannelState};
use qv2x::codec::{DecodeMode, OptimizerKind, TrainHyper};
use qv2x::fed::FedConfig;
use qv2x::fusion::{FusionGrid, MAX_FEATURES};
use qv2x::transfer::{EnvConfig, RewardWeights, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};

/// A scenario: one TOML file with a section per module. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default = "default_vehicles")]
    pub n_vehicles: usize,
    #[serde(default = "default_rsus")]
    pub n_rsus: usize,
    /// Digits CSV, relative to the config file.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Output directory, relative to the working directory; `--out` overrides it.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub codec: CodecSection,
    #[serde(default)]
    pub hparam: HparamSection,
    #[serde(default)]
    pub link: LinkSection,
    #[serde(default)]
    pub rl: RlSection,
    #[serde(default)]
    pub fed: FedSection,
    #[serde(default)]
    pub fusion: FusionSection,
}

fn default_vehicles() -> usize {
    4
}

fn default_rsus() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub rho: f64,
    pub snr_step_db: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub initial_snr_db: f64,
    pub coherence_steps: usize,
    /// Ascending capacity thresholds in bits per channel use.
    pub thresholds: Vec<f64>,
    pub trace_steps: usize,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            rho: 0.95,
            snr_step_db: 1.0,
            snr_min_db: 0.0,
            snr_max_db: 30.0,
            initial_snr_db: 15.0,
            coherence_steps: 4,
            thresholds: vec![3.0],
            trace_steps: 200,
        }
    }
}

impl ChannelSection {
    pub fn dynamics(&self) -> ChannelDynamics {
        ChannelDynamics {
            rho: self.rho,
            snr_step_db: self.snr_step_db,
            snr_min_db: self.snr_min_db,
            snr_max_db: self.snr_max_db,
        }
    }

    pub fn initial_state(&self) -> qv2x::Result<ChannelState> {
        ChannelState::new(
            self.initial_snr_db,
            Complex64::new(1.0, 0.0),
            self.coherence_steps,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSection {
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub latent_wires: Vec<usize>,
}

impl Default for CodecSection {
    fn default() -> Self {
        Self {
            lr: 0.01,
            optimizer: OptimizerKind::Adam,
            batch_size: 64,
            epochs: 150,
            lambda: 0.0,
            latent_wires: vec![0, 1],
        }
    }
}

impl CodecSection {
    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            lr: self.lr,
            optimizer: self.optimizer,
            batch_size: self.batch_size,
            lambda: self.lambda,
        }
    }
}

/// Sweep panels around the reference cell given by `[codec]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HparamSection {
    pub lrs: Vec<f64>,
    pub optimizers: Vec<OptimizerKind>,
    pub batch_sizes: Vec<usize>,
}

impl Default for HparamSection {
    fn default() -> Self {
        Self {
            lrs: vec![0.1, 0.01, 0.001],
            optimizers: OptimizerKind::ALL.to_vec(),
            batch_sizes: vec![32, 64, 128],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkSection {
    pub snrs_db: Vec<f64>,
    /// Codec checkpoint to load, relative to the config file.
    pub checkpoint: Option<PathBuf>,
    /// Train a codec when no checkpoint is given.
    pub train: bool,
    pub epochs: usize,
    pub lambda: f64,
    pub decode: DecodeMode,
    /// Test images sent per SNR point (0 = the whole test split).
    pub samples: usize,
    pub kb_prototypes: usize,
    pub kb_match_tol: f64,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self {
            snrs_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            checkpoint: None,
            train: true,
            epochs: 30,
            lambda: 1.0,
            decode: DecodeMode::Classical,
            samples: 0,
            kb_prototypes: 16,
            kb_match_tol: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlSection {
    pub gamma: f64,
    pub tau: f64,
    pub layers: usize,
    pub v_scale: f64,
    pub init_scale: f64,
    pub fixture: TrainConfig,
    /// Fixture seeds are `seed, seed + 1, …`.
    pub fixture_runs: usize,
    pub vehicle_episodes: usize,
    pub vehicle_steps: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub weights: RewardWeights,
    pub env: EnvConfig,
}

impl Default for RlSection {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            tau: 1.0,
            layers: 3,
            v_scale: 10.0,
            init_scale: 0.1,
            fixture: TrainConfig::default(),
            fixture_runs: 3,
            vehicle_episodes: 40,
            vehicle_steps: 25,
            lr_actor: 0.02,
            lr_critic: 0.02,
            weights: RewardWeights::default(),
            env: EnvConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Iid,
    LabelSkew,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedSection {
    pub rounds: usize,
    pub local_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub client_tau: f64,
    pub cloud_tau: f64,
    pub r_max: usize,
    pub alpha: f64,
    pub partition: Partition,
    /// Full-batch steps on the validation split before the first broadcast.
    pub warm_start_steps: usize,
    pub warm_start_lr: f64,
    pub dense_baseline: bool,
}

impl Default for FedSection {
    fn default() -> Self {
        let d = FedConfig::default();
        Self {
            rounds: d.rounds,
            local_steps: d.local_steps,
            batch_size: d.batch_size,
            lr: d.lr,
            lambda: d.lambda,
            client_tau: d.client_tau,
            cloud_tau: d.cloud_tau,
            r_max: d.r_max,
            alpha: d.alpha,
            partition: Partition::Iid,
            warm_start_steps: 400,
            warm_start_lr: 0.5,
            dense_baseline: true,
        }
    }
}

impl FedSection {
    pub fn fed_config(&self, seed: u64) -> FedConfig {
        FedConfig {
            rounds: self.rounds,
            local_steps: self.local_steps,
            batch_size: self.batch_size,
            lr: self.lr,
            lambda: self.lambda,
            client_tau: self.client_tau,
            cloud_tau: self.cloud_tau,
            r_max: self.r_max,
            alpha: self.alpha,
            mask_seed: seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub grid: FusionGrid,
    pub feature_dim: usize,
    pub p_camera: f64,
    pub p_lidar: f64,
    pub k_keep: usize,
    pub scenes: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            grid: FusionGrid::default(),
            feature_dim: 8,
            p_camera: 0.7,
            p_lidar: 0.35,
            k_keep: 4,
            scenes: 20,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> SimError {
    SimError::Config(e.to_string())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset and checkpoint paths are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset = cfg.dataset.map(|p| base.join(p));
        cfg.link.checkpoint = cfg.link.checkpoint.map(|p| base.join(p));
        Ok(cfg)
    }

    /// Checks every value against the preconditions of the module that consumes it.
    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles < 2 {
            return Err(config_err(
                "n_vehicles must be ≥ 2 (federated rounds need two clients)",
            ));
        }
        if self.n_rsus == 0 {
            return Err(config_err("n_rsus must be ≥ 1"));
        }
        let c = &self.channel;
        c.dynamics().validate().map_err(config_err)?;
        c.initial_state()
            .and_then(|s| s.validate())
            .map_err(config_err)?;
        qv2x::channel::adapt_rate(0.0, &c.thresholds, 1).map_err(config_err)?;

        self.codec.hyper().validate().map_err(config_err)?;
        if self.codec.latent_wires.is_empty() {
            return Err(config_err("codec.latent_wires is empty"));
        }
        let h = &self.hparam;
        if h.lrs.is_empty() || h.optimizers.is_empty() || h.batch_sizes.is_empty() {
            return Err(config_err("hparam sweep lists must be non-empty"));
        }
        for &lr in &h.lrs {
            TrainHyper {
                lr,
                ..self.codec.hyper()
            }
            .validate()
            .map_err(config_err)?;
        }
        if h.batch_sizes.contains(&0) {
            return Err(config_err("hparam.batch_sizes must be ≥ 1"));
        }

        let l = &self.link;
        if l.snrs_db.is_empty() || l.snrs_db.iter().any(|s| s.is_nan()) {
            return Err(config_err(
                "link.snrs_db must be a non-empty list of numbers",
            ));
        }
        if !(l.lambda >= 0.0) || !(l.kb_match_tol >= 0.0) {
            return Err(config_err("link.lambda and link.kb_match_tol must be ≥ 0"));
        }

        let r = &self.rl;
        r.fixture.validate().map_err(config_err)?;
        r.weights.validate().map_err(config_err)?;
        r.env.validate().map_err(config_err)?;
        if !(r.tau > 0.0) || !(0.0..=1.0).contains(&r.gamma) || r.layers == 0 {
            return Err(config_err(
                "rl needs tau > 0, gamma in [0, 1] and layers ≥ 1",
            ));
        }
        if r.fixture_runs == 0 || r.vehicle_steps == 0 {
            return Err(config_err(
                "rl.fixture_runs and rl.vehicle_steps must be ≥ 1",
            ));
        }
        for lr in [r.lr_actor, r.lr_critic] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return Err(config_err("rl learning rates must be finite and ≥ 0"));
            }
        }

        let f = &self.fed;
        f.fed_config(self.seed).validate().map_err(config_err)?;
        if !(f.warm_start_lr >= 0.0) || !f.warm_start_lr.is_finite() {
            return Err(config_err("fed.warm_start_lr must be finite and ≥ 0"));
        }

        let u = &self.fusion;
        u.grid.validate().map_err(config_err)?;
        if !(2..=MAX_FEATURES).contains(&u.feature_dim) || !u.feature_dim.is_power_of_two() {
            return Err(config_err(format!(
                "fusion.feature_dim must be a power of two in 2..={MAX_FEATURES}"
            )));
        }
        if !(1..=u.feature_dim).contains(&u.k_keep) {
            return Err(config_err("fusion.k_keep must lie in 1..=feature_dim"));
        }
        for p in [u.p_camera, u.p_lidar] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err(
                    "fusion occupancy probabilities must lie in [0, 1]",
                ));
            }
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form, excluding the
    /// output directory.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&Self {
            out: None,
            ..self.clone()
        })
        .expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| config_err("this command needs `dataset` in the config"))
    }
}
