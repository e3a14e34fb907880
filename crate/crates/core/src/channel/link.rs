use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::kb::{KbSymbol, KnowledgeBase};
use super::state::{
    adapt_rate, evolve_channel, semantic_capacity, ChannelDynamics, ChannelState, RateDecision,
};
use crate::codec::SemanticFeatures;
use crate::error::{Error, Result};

/// Analog transmission `y = h·x + n`, equalized as `Re(y/h)`, without output clamping.
///
/// Each real and imaginary noise component has variance `σ² = mean(x²)/10^(snr_db/10)`,
/// so the equalized error variance is `σ²/|h|²`.
pub fn transmit_unclamped<R: Rng + ?Sized>(
    features: &[f64],
    state: &mut ChannelState,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if features.is_empty() {
        return Err(Error::Domain("nothing to transmit".into()));
    }
    state.regenerate(rng);
    let power = features.iter().map(|x| x * x).sum::<f64>() / features.len() as f64;
    let sigma = (power / 10f64.powf(state.snr_db / 10.0)).sqrt();
    let h = state.fading;
    Ok(features
        .iter()
        .map(|&x| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let y = h * x + Complex64::new(sigma * re, sigma * im);
            (y / h).re
        })
        .collect())
}

/// [`transmit_unclamped`] followed by clamping to the feature range `[-1, 1]`.
pub fn transmit<R: Rng + ?Sized>(
    features: &SemanticFeatures,
    state: &mut ChannelState,
    rng: &mut R,
) -> Result<SemanticFeatures> {
    let y = transmit_unclamped(features.values(), state, rng)?;
    SemanticFeatures::new(y.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmitReport {
    pub payload_dims_sent: usize,
    pub tokens_substituted: usize,
    pub effective_snr_db: f64,
}

/// One row of an exported channel trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub snr_db: f64,
    pub re_h: f64,
    pub im_h: f64,
    pub capacity: f64,
    pub protocol_mode: String,
}

/// A single simulated link with its own seeded generator.
///
/// Every step walks the SNR; the fading coefficient moves once per coherence block.
#[derive(Clone, Debug)]
pub struct Link {
    state: ChannelState,
    dynamics: ChannelDynamics,
    thresholds: Vec<f64>,
    rng: ChaCha8Rng,
    step: u64,
}

impl Link {
    pub fn new(
        initial: ChannelState,
        dynamics: ChannelDynamics,
        thresholds: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        initial.validate()?;
        dynamics.validate()?;
        adapt_rate(0.0, &thresholds, 1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = initial;
        state.regenerate(&mut rng);
        Ok(Self {
            state,
            dynamics,
            thresholds,
            rng,
            step: 0,
        })
    }

    pub fn state(&self) -> &ChannelState {
        &self.state
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn capacity(&self) -> f64 {
        semantic_capacity(&self.state)
    }

    pub fn advance(&mut self) {
        self.step += 1;
        let held = self.state.fading;
        let next = evolve_channel(&self.state, &self.dynamics, &mut self.rng);
        let boundary = self.step.is_multiple_of(self.state.coherence_steps as u64);
        self.state = ChannelState {
            fading: if boundary { next.fading } else { held },
            ..next
        };
    }

    /// Chooses the protocol mode for the current capacity and records it in the state.
    pub fn decide(&mut self, full_dim: usize) -> RateDecision {
        let d = adapt_rate(self.capacity(), &self.thresholds, full_dim)
            .expect("thresholds validated at construction");
        self.state.protocol_mode = d.protocol_mode;
        d
    }

    pub fn trace_row(&self) -> TraceRow {
        TraceRow {
            step: self.step,
            snr_db: self.state.snr_db,
            re_h: self.state.fading.re,
            im_h: self.state.fading.im,
            capacity: self.capacity(),
            protocol_mode: self.state.protocol_mode.to_string(),
        }
    }

    /// Decides the rate, optionally substitutes knowledge-base tokens for feature
    /// chunks, and sends the remaining raw values over the channel.
    ///
    /// Tokens travel error-free on the control path. The receiver output has the full
    /// feature dimension; features that were not sent read as 0.
    pub fn send(
        &mut self,
        features: &SemanticFeatures,
        kb: Option<&KnowledgeBase>,
    ) -> Result<(Vec<f64>, TransmitReport)> {
        let full = features.dim();
        let decision = self.decide(full);
        let kept = &features.values()[..decision.latent_dims_to_send];

        let symbols: Vec<KbSymbol> = match kb.filter(|kb| !kb.is_empty()) {
            Some(kb) => {
                let chunk = kb.dim();
                let whole = kept.len() / chunk * chunk;
                let mut s = kb.compress(&kept[..whole].chunks(chunk).collect::<Vec<_>>())?;
                if whole < kept.len() {
                    s.push(KbSymbol::Raw(kept[whole..].to_vec()));
                }
                s
            }
            None => vec![KbSymbol::Raw(kept.to_vec())],
        };
        let raw: Vec<f64> = symbols
            .iter()
            .filter_map(|s| match s {
                KbSymbol::Raw(v) => Some(v.as_slice()),
                KbSymbol::Token(_) => None,
            })
            .flatten()
            .copied()
            .collect();
        let tokens = symbols.len()
            - symbols
                .iter()
                .filter(|s| matches!(s, KbSymbol::Raw(_)))
                .count();

        let mut received_raw = if raw.is_empty() {
            Vec::new()
        } else {
            transmit_unclamped(&raw, &mut self.state, &mut self.rng)?
                .into_iter()
                .map(|v| v.clamp(-1.0, 1.0))
                .collect()
        };
        received_raw.reverse();
        let mut out = Vec::with_capacity(full);
        for s in &symbols {
            match s {
                KbSymbol::Token(id) => out
                    .extend_from_slice(kb.expect("tokens imply a knowledge base").prototype(*id)?),
                KbSymbol::Raw(v) => {
                    for _ in 0..v.len() {
                        out.push(received_raw.pop().expect("one value per raw dim"));
                    }
                }
            }
        }
        out.resize(full, 0.0);
        let report = TransmitReport {
            payload_dims_sent: raw.len(),
            tokens_substituted: tokens,
            effective_snr_db: self.state.effective_snr_db(),
        };
        Ok((out, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_snr_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ChannelState::new(f64::INFINITY, Complex64::new(1.0, 0.0), 1).unwrap();
        let x = vec![0.3, -0.9, 1.0, 0.0];
        assert_eq!(transmit_unclamped(&x, &mut s, &mut rng).unwrap(), x);
    }

    #[test]
    fn noise_variance_matches_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut s = ChannelState::new(10.0, Complex64::new(1.0, 0.0), 1).unwrap();
        // unit-power signal: σ² = 1/10
        let x: Vec<f64> = (0..100_000)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let y = transmit_unclamped(&x, &mut s, &mut rng).unwrap();
        let mse = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
        assert!((mse - 0.1).abs() < 0.005, "mse {mse}");
    }

    #[test]
    fn transmit_is_reproducible_and_clamped() {
        let f = SemanticFeatures::new(vec![0.9, -0.95, 0.2, 1.0]).unwrap();
        let s0 = ChannelState::new(0.0, Complex64::new(0.6, 0.8), 1).unwrap();
        let run = |seed| {
            let mut s = s0;
            transmit(&f, &mut s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        };
        assert_eq!(run(5), run(5));
        assert!(run(5).values().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(
            transmit_unclamped(&[], &mut s0.clone(), &mut ChaCha8Rng::seed_from_u64(0)).is_err()
        );
    }

    #[test]
    fn link_robust_mode_sends_half_and_zero_fills() {
        let s = ChannelState::new(0.0, Complex64::new(0.1, 0.0), 1).unwrap();
        let mut link = Link::new(s, ChannelDynamics::default(), vec![1.0, 4.0], 9).unwrap();
        let f = SemanticFeatures::new(vec![0.5; 8]).unwrap();
        let (y, report) = link.send(&f, None).unwrap();
        assert_eq!(report.payload_dims_sent, 4);
        assert_eq!(&y[4..], &[0.0; 4]);
        assert_eq!(link.trace_row().protocol_mode, "ROBUST");
    }

    #[test]
    fn link_substitutes_tokens() {
        let s = ChannelState::new(30.0, Complex64::new(1.0, 0.0), 1).unwrap();
        let mut link = Link::new(s, ChannelDynamics::default(), vec![0.5], 9).unwrap();
        let kb = KnowledgeBase::new(vec![(3, vec![0.5, 0.5])], 1e-9).unwrap();
        let f = SemanticFeatures::new(vec![0.5, 0.5, 0.1, -0.2, 0.5, 0.5]).unwrap();
        let (y, report) = link.send(&f, Some(&kb)).unwrap();
        assert_eq!(report.tokens_substituted, 2);
        assert_eq!(report.payload_dims_sent, 2);
        assert_eq!(&y[..2], &[0.5, 0.5]);
        assert_eq!(&y[4..], &[0.5, 0.5]);
    }

    #[test]
    fn fading_held_within_coherence_block() {
        let s = ChannelState::new(10.0, Complex64::new(1.0, 0.0), 3).unwrap();
        let mut link = Link::new(s, ChannelDynamics::default(), vec![1.0], 1).unwrap();
        link.advance();
        link.advance();
        assert_eq!(link.state().fading, Complex64::new(1.0, 0.0));
        link.advance();
        assert_ne!(link.state().fading, Complex64::new(1.0, 0.0));
    }
}
