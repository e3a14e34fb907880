use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{evolve_channel, semantic_capacity, ChannelDynamics, ChannelState};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransferAction {
    FineTuneLocal,
    ReceiveGlobal,
    ShareWithNeighbor,
}

impl TransferAction {
    pub const ALL: [TransferAction; 3] = [
        TransferAction::FineTuneLocal,
        TransferAction::ReceiveGlobal,
        TransferAction::ShareWithNeighbor,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Domain(format!("action index {i} outside 0..3")))
    }
}

impl fmt::Display for TransferAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferAction::FineTuneLocal => "FINE_TUNE_LOCAL",
            TransferAction::ReceiveGlobal => "RECEIVE_GLOBAL",
            TransferAction::ShareWithNeighbor => "SHARE_WITH_NEIGHBOR",
        })
    }
}

/// Observation of one vehicle; every component lies in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Normalized class-histogram sketch of the local data.
    pub data_summary: [f64; 4],
    pub channel_quality: f64,
    pub neighbor_code: f64,
    pub local_accuracy: f64,
}

impl VehicleState {
    pub fn uniform(x: f64) -> Self {
        Self {
            data_summary: [x; 4],
            channel_quality: x,
            neighbor_code: x,
            local_accuracy: x,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.data_summary.iter().chain([
            &self.channel_quality,
            &self.neighbor_code,
            &self.local_accuracy,
        ]);
        for v in all {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Domain(format!("state component {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// The four values fed to the circuits.
    pub fn summary(&self) -> [f64; 4] {
        [
            self.data_summary.iter().sum::<f64>() / 4.0,
            self.channel_quality,
            self.neighbor_code,
            self.local_accuracy,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub w_lat: f64,
    pub w_acc: f64,
    pub w_sem: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_lat: 0.3,
            w_acc: 0.5,
            w_sem: 0.2,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_lat, self.w_acc, self.w_sem];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(
                "reward weights must be finite and ≥ 0".into(),
            ));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Domain("reward weights are all zero".into()));
        }
        Ok(())
    }
}

/// Dynamics constants of the simulated vehicle environment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Fraction of the remaining accuracy gap closed by local fine-tuning.
    pub fine_tune_gain: f64,
    pub global_accuracy: f64,
    /// Fraction of the gap to the global accuracy closed by receiving the global model.
    pub receive_jump: f64,
    /// Model size in bits per channel use; latency of a download is `size / capacity`.
    pub model_size: f64,
    pub local_latency: f64,
    pub share_latency: f64,
    pub share_consistency: f64,
    /// Accuracy lost per step to data drift.
    pub drift: f64,
    pub channel: ChannelDynamics,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            fine_tune_gain: 0.1,
            global_accuracy: 0.9,
            receive_jump: 0.8,
            model_size: 1.0,
            local_latency: 0.05,
            share_latency: 0.3,
            share_consistency: 0.5,
            drift: 0.02,
            channel: ChannelDynamics::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        let unit = [
            self.fine_tune_gain,
            self.global_accuracy,
            self.receive_jump,
            self.drift,
        ];
        if unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain(
                "gains, drift and global accuracy must lie in [0, 1]".into(),
            ));
        }
        let nonneg = [
            self.model_size,
            self.local_latency,
            self.share_latency,
            self.share_consistency,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(
                "latency and size constants must be finite and ≥ 0".into(),
            ));
        }
        Ok(())
    }

    /// Capacity at the top of the SNR range with unit fading, used to normalize quality.
    pub fn reference_capacity(&self) -> f64 {
        (1.0 + 10f64.powf(self.channel.snr_max_db / 10.0)).log2()
    }
}

/// Exogenous part of a transition: the channel evolves, the neighbor code drifts and
/// the observed channel quality follows the new capacity. Accuracy is untouched.
pub fn evolve_env<R: Rng + ?Sized>(
    s: &VehicleState,
    cfg: &EnvConfig,
    channel: &mut ChannelState,
    rng: &mut R,
) -> Result<VehicleState> {
    s.validate()?;
    *channel = evolve_channel(channel, &cfg.channel, rng);
    let neighbor_step: f64 = rng.random_range(-0.05..=0.05);
    Ok(VehicleState {
        channel_quality: (semantic_capacity(channel) / cfg.reference_capacity()).clamp(0.0, 1.0),
        neighbor_code: (s.neighbor_code + neighbor_step).clamp(0.0, 1.0),
        ..*s
    })
}

/// Effect of an action under the current channel; returns the next state and reward.
pub fn apply_action(
    s: &VehicleState,
    a: TransferAction,
    w: &RewardWeights,
    cfg: &EnvConfig,
    channel: &ChannelState,
) -> Result<(VehicleState, f64)> {
    s.validate()?;
    w.validate()?;
    let capacity = semantic_capacity(channel);
    let acc = s.local_accuracy;
    let (delta_acc, latency, consistency) = match a {
        TransferAction::FineTuneLocal => (cfg.fine_tune_gain * (1.0 - acc), cfg.local_latency, 0.0),
        TransferAction::ReceiveGlobal => (
            cfg.receive_jump * (cfg.global_accuracy - acc),
            (cfg.model_size / capacity.max(1e-3)).min(10.0),
            0.0,
        ),
        TransferAction::ShareWithNeighbor => (
            0.0,
            cfg.share_latency,
            cfg.share_consistency * s.neighbor_code,
        ),
    };
    let reward = w.w_acc * delta_acc - w.w_lat * latency + w.w_sem * consistency;
    let next = VehicleState {
        local_accuracy: (acc + delta_acc - cfg.drift).clamp(0.0, 1.0),
        ..*s
    };
    Ok((next, reward))
}

/// One environment transition: [`evolve_env`] then [`apply_action`]. Every random
/// draw happens before the action is inspected, so the actions from one state
/// compete under the same noise.
pub fn step_env<R: Rng + ?Sized>(
    s: &VehicleState,
    a: TransferAction,
    w: &RewardWeights,
    cfg: &EnvConfig,
    channel: &mut ChannelState,
    rng: &mut R,
) -> Result<(VehicleState, f64)> {
    w.validate()?;
    let evolved = evolve_env(s, cfg, channel, rng)?;
    apply_action(&evolved, a, w, cfg, channel)
}

/// A vehicle with its own link and generator.
#[derive(Clone, Debug)]
pub struct VehicleEnv {
    pub config: EnvConfig,
    pub weights: RewardWeights,
    pub state: VehicleState,
    pub channel: ChannelState,
    rng: ChaCha8Rng,
}

impl VehicleEnv {
    pub fn new(config: EnvConfig, weights: RewardWeights, seed: u64) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = Self {
            config,
            weights,
            state: VehicleState::uniform(0.5),
            channel: ChannelState::new(15.0, Complex64::new(1.0, 0.0), 1)?,
            rng: ChaCha8Rng::seed_from_u64(0),
        };
        env.reset_with(&mut rng);
        env.rng = rng;
        Ok(env)
    }

    fn reset_with(&mut self, rng: &mut ChaCha8Rng) {
        let mut sketch = [0.0; 4];
        for v in sketch.iter_mut() {
            *v = rng.random();
        }
        let total: f64 = sketch.iter().sum();
        for v in sketch.iter_mut() {
            *v /= total.max(1e-12);
        }
        let snr = rng.random_range(self.config.channel.snr_min_db..=self.config.channel.snr_max_db);
        self.channel = ChannelState::new(snr, crate::channel::draw_fading(rng), 1)
            .expect("valid initial channel");
        self.state = VehicleState {
            data_summary: sketch,
            channel_quality: (semantic_capacity(&self.channel) / self.config.reference_capacity())
                .clamp(0.0, 1.0),
            neighbor_code: rng.random(),
            local_accuracy: rng.random_range(0.3..0.7),
        };
    }

    pub fn reset(&mut self) -> VehicleState {
        let mut rng = self.rng.clone();
        self.reset_with(&mut rng);
        self.rng = rng;
        self.state
    }

    /// Advances the channel and the exogenous state components.
    pub fn evolve(&mut self) -> Result<VehicleState> {
        self.state = evolve_env(&self.state, &self.config, &mut self.channel, &mut self.rng)?;
        Ok(self.state)
    }

    /// Applies an action under the current channel without evolving it.
    pub fn act(&mut self, a: TransferAction) -> Result<f64> {
        let (next, r) = apply_action(&self.state, a, &self.weights, &self.config, &self.channel)?;
        self.state = next;
        Ok(r)
    }

    /// Transmits `values` over this vehicle's channel with its generator.
    pub fn transmit(&mut self, values: &[f64]) -> Result<Vec<f64>> {
        crate::channel::transmit_unclamped(values, &mut self.channel, &mut self.rng)
    }

    pub fn step(&mut self, a: TransferAction) -> Result<(VehicleState, f64)> {
        let (next, r) = step_env(
            &self.state,
            a,
            &self.weights,
            &self.config,
            &mut self.channel,
            &mut self.rng,
        )?;
        self.state = next;
        Ok((next, r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_weight_ranks_by_accuracy_gain() {
        let w = RewardWeights {
            w_lat: 0.0,
            w_acc: 1.0,
            w_sem: 0.0,
        };
        let cfg = EnvConfig::default();
        let s = VehicleState {
            local_accuracy: 0.4,
            ..VehicleState::uniform(0.5)
        };
        let ch = ChannelState::new(10.0, Complex64::new(1.0, 0.0), 1).unwrap();
        let rewards: Vec<f64> = TransferAction::ALL
            .iter()
            .map(|&a| {
                let mut c = ch;
                step_env(&s, a, &w, &cfg, &mut c, &mut ChaCha8Rng::seed_from_u64(4))
                    .unwrap()
                    .1
            })
            .collect();
        // gains: fine-tune 0.1·0.6, receive 0.8·0.5, share 0
        assert!(
            rewards[1] > rewards[0] && rewards[0] > rewards[2],
            "{rewards:?}"
        );
        assert!((rewards[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn weights_and_states_validated() {
        let zero = RewardWeights {
            w_lat: 0.0,
            w_acc: 0.0,
            w_sem: 0.0,
        };
        assert!(zero.validate().is_err());
        assert!(VehicleState::uniform(1.2).validate().is_err());
        assert!(VehicleEnv::new(EnvConfig::default(), zero, 1).is_err());
    }

    #[test]
    fn env_is_seeded_and_bounded() {
        let run = |seed| {
            let mut env =
                VehicleEnv::new(EnvConfig::default(), RewardWeights::default(), seed).unwrap();
            let mut out = vec![env.reset()];
            for i in 0..30 {
                out.push(env.step(TransferAction::ALL[i % 3]).unwrap().0);
            }
            out
        };
        let a = run(9);
        assert_eq!(a, run(9));
        for s in &a {
            s.validate().unwrap();
        }
    }

    #[test]
    fn action_names() {
        assert_eq!(
            TransferAction::ShareWithNeighbor.to_string(),
            "SHARE_WITH_NEIGHBOR"
        );
        assert_eq!(
            serde_json::to_string(&TransferAction::FineTuneLocal).unwrap(),
            "\"FINE_TUNE_LOCAL\""
        );
        assert!(TransferAction::from_index(3).is_err());
    }
}
