use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fading magnitudes below this are redrawn.
pub const MIN_FADING: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProtocolMode {
    HighRate,
    Robust,
}

impl fmt::Display for ProtocolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolMode::HighRate => "HIGH_RATE",
            ProtocolMode::Robust => "ROBUST",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub snr_db: f64,
    pub fading: Complex64,
    /// Steps over which one fading realization is held.
    pub coherence_steps: usize,
    pub protocol_mode: ProtocolMode,
}

impl ChannelState {
    pub fn new(snr_db: f64, fading: Complex64, coherence_steps: usize) -> Result<Self> {
        let s = Self {
            snr_db,
            fading,
            coherence_steps,
            protocol_mode: ProtocolMode::HighRate,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coherence_steps == 0 {
            return Err(Error::Domain("coherence_steps must be ≥ 1".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Domain("snr_db is NaN".into()));
        }
        if !self.fading.re.is_finite() || !self.fading.im.is_finite() {
            return Err(Error::NonFinite("fading coefficient".into()));
        }
        Ok(())
    }

    /// `|h|²`.
    pub fn gain(&self) -> f64 {
        self.fading.norm_sqr()
    }

    /// Receive SNR after fading, in dB.
    pub fn effective_snr_db(&self) -> f64 {
        self.snr_db + 10.0 * self.gain().log10()
    }

    /// Replaces a vanishing fading coefficient with a fresh draw.
    pub fn regenerate<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.fading.norm() < MIN_FADING {
            self.fading = draw_fading(rng);
        }
    }
}

/// Parameters of the channel's random evolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDynamics {
    /// Per-step fading correlation ρ.
    pub rho: f64,
    /// SNR random-walk increments are uniform in `[-snr_step_db, snr_step_db]`.
    pub snr_step_db: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
}

impl Default for ChannelDynamics {
    fn default() -> Self {
        Self {
            rho: 0.95,
            snr_step_db: 1.0,
            snr_min_db: 0.0,
            snr_max_db: 30.0,
        }
    }
}

impl ChannelDynamics {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Domain(format!("rho = {} outside [0, 1]", self.rho)));
        }
        if !(self.snr_step_db >= 0.0) || !self.snr_step_db.is_finite() {
            return Err(Error::Domain("snr_step_db must be finite and ≥ 0".into()));
        }
        if !(self.snr_min_db <= self.snr_max_db) {
            return Err(Error::Domain("snr bounds are not ordered".into()));
        }
        Ok(())
    }
}

/// `CN(0, 1)` draw with `|h| ≥ MIN_FADING`.
pub fn draw_fading<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    loop {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let h = Complex64::new(s * re, s * im);
        if h.norm() >= MIN_FADING {
            return h;
        }
    }
}

/// One step of `h' = ρh + √(1−ρ²)·CN(0,1)` plus a bounded SNR random walk.
pub fn evolve_channel<R: Rng + ?Sized>(
    state: &ChannelState,
    dynamics: &ChannelDynamics,
    rng: &mut R,
) -> ChannelState {
    let rho = dynamics.rho;
    let innovation = draw_fading(rng);
    let mut next = *state;
    next.fading = state.fading * rho + innovation * (1.0 - rho * rho).sqrt();
    if dynamics.snr_step_db > 0.0 {
        let step = rng.random_range(-dynamics.snr_step_db..=dynamics.snr_step_db);
        next.snr_db = (state.snr_db + step).clamp(dynamics.snr_min_db, dynamics.snr_max_db);
    }
    next.regenerate(rng);
    next
}

/// `C = log2(1 + |h|²·10^(snr_db/10))` bits per channel use.
pub fn semantic_capacity(state: &ChannelState) -> f64 {
    (state.gain() * 10f64.powf(state.snr_db / 10.0)).ln_1p() / std::f64::consts::LN_2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateDecision {
    pub protocol_mode: ProtocolMode,
    pub latent_dims_to_send: usize,
}

/// Two-mode adaptation: at or above the highest threshold the full latent vector goes
/// out at high rate; below it only the first `⌈d/2⌉` features are sent robustly.
pub fn adapt_rate(capacity: f64, thresholds: &[f64], full_dim: usize) -> Result<RateDecision> {
    let Some(&high) = thresholds.last() else {
        return Err(Error::Domain("no rate thresholds".into()));
    };
    if thresholds.iter().any(|t| t.is_nan()) || thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Domain(format!(
            "thresholds {thresholds:?} not ascending"
        )));
    }
    Ok(if capacity >= high {
        RateDecision {
            protocol_mode: ProtocolMode::HighRate,
            latent_dims_to_send: full_dim,
        }
    } else {
        RateDecision {
            protocol_mode: ProtocolMode::Robust,
            latent_dims_to_send: full_dim.div_ceil(2),
        }
    })
}
