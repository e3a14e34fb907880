use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::{TransferAction, VehicleState};
use crate::error::{check_dim, Error, Result};
use crate::qcore::{expectations, param_shift_full, Angle, Circuit, Observable, StateVector};

pub const N_ACTIONS: usize = 3;
/// Wires whose `⟨Z⟩` feed the action softmax.
pub const POLICY_WIRES: [usize; N_ACTIONS] = [0, 1, 2];

pub const AGENT_QUBITS: usize = 4;

/// Variational layout shared by actor and critic. Each layer applies RY and RZ on
/// every wire, then a ring of parameterized `ZY` couplings `CNOT(w, w+1)·RY_{w+1}(θ)·
/// CNOT(w, w+1)`; every gate is the identity at zero parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentAnsatz {
    pub layers: usize,
}

impl Default for AgentAnsatz {
    fn default() -> Self {
        Self { layers: 3 }
    }
}

impl AgentAnsatz {
    pub fn n_params(&self) -> usize {
        self.layers * 3 * AGENT_QUBITS
    }

    /// Slots `12l + 2w` (RY) and `12l + 2w + 1` (RZ) for wire `w`, then `12l + 8 + w`
    /// for the coupling from `w` to `w + 1 mod 4`.
    pub fn circuit(&self) -> Circuit<f64> {
        let mut c = Circuit::with_params(AGENT_QUBITS, self.n_params()).expect("4 qubits");
        for l in 0..self.layers {
            let base = l * 3 * AGENT_QUBITS;
            for w in 0..AGENT_QUBITS {
                c.ry(w, Angle::slot(base + 2 * w)).expect("valid wire");
                c.rz(w, Angle::slot(base + 2 * w + 1)).expect("valid wire");
            }
            for w in 0..AGENT_QUBITS {
                let t = (w + 1) % AGENT_QUBITS;
                c.cnot(w, t).expect("valid wire");
                c.ry(t, Angle::slot(base + 2 * AGENT_QUBITS + w))
                    .expect("valid wire");
                c.cnot(w, t).expect("valid wire");
            }
        }
        c
    }
}

/// Actor and critic share the 4-qubit layout: `RY(π·x)` state encoding followed by
/// [`AgentAnsatz`]. The actor reads `⟨Z⟩` on wires 0..3, the critic
/// `⟨Z₀⟩` scaled by `v_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub ansatz: AgentAnsatz,
    pub actor_params: Vec<f64>,
    pub critic_params: Vec<f64>,
    pub tau: f64,
    pub gamma: f64,
    pub v_scale: f64,
}

impl ActorCritic {
    pub fn zeros(ansatz: AgentAnsatz, tau: f64, gamma: f64, v_scale: f64) -> Result<Self> {
        let ac = Self {
            ansatz,
            actor_params: vec![0.0; ansatz.n_params()],
            critic_params: vec![0.0; ansatz.n_params()],
            tau,
            gamma,
            v_scale,
        };
        ac.validate()?;
        Ok(ac)
    }

    /// Parameters uniform in `[-init_scale, init_scale]` from a seeded generator.
    pub fn init(
        ansatz: AgentAnsatz,
        tau: f64,
        gamma: f64,
        v_scale: f64,
        init_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut ac = Self::zeros(ansatz, tau, gamma, v_scale)?;
        if init_scale > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for p in ac
                .actor_params
                .iter_mut()
                .chain(ac.critic_params.iter_mut())
            {
                *p = rng.random_range(-init_scale..=init_scale);
            }
        }
        Ok(ac)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Domain(format!(
                "temperature {} must be > 0",
                self.tau
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Domain(format!(
                "discount {} outside [0, 1)",
                self.gamma
            )));
        }
        if !self.v_scale.is_finite() {
            return Err(Error::Domain("v_scale must be finite".into()));
        }
        check_dim(self.ansatz.n_params(), self.actor_params.len())?;
        check_dim(self.ansatz.n_params(), self.critic_params.len())?;
        if self
            .actor_params
            .iter()
            .chain(&self.critic_params)
            .any(|p| !p.is_finite())
        {
            return Err(Error::NonFinite("actor-critic parameters".into()));
        }
        Ok(())
    }
}

/// `π·x` for the four state summary values.
pub fn encode_state(s: &VehicleState) -> Result<[f64; 4]> {
    s.validate()?;
    Ok(s.summary().map(|x| std::f64::consts::PI * x))
}

fn encoded(s: &VehicleState) -> Result<StateVector<f64>> {
    StateVector::product_ry(&encode_state(s)?)
}

fn policy_observables() -> Vec<Observable> {
    POLICY_WIRES.iter().map(|&w| Observable::z(w)).collect()
}

fn softmax(z: &[f64], tau: f64) -> [f64; N_ACTIONS] {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; N_ACTIONS];
    for (pi, zi) in p.iter_mut().zip(z) {
        *pi = ((zi - max) / tau).exp();
    }
    let total: f64 = p.iter().sum();
    p.map(|v| v / total)
}

/// `softmax(⟨Z₀⟩, ⟨Z₁⟩, ⟨Z₂⟩ / τ)` from the actor circuit.
pub fn policy(ac: &ActorCritic, s: &VehicleState) -> Result<[f64; N_ACTIONS]> {
    let z = expectations(
        &ac.ansatz.circuit(),
        &ac.actor_params,
        &encoded(s)?,
        &policy_observables(),
    )?;
    Ok(softmax(&z, ac.tau))
}

/// `v_scale · ⟨Z₀⟩` from the critic circuit.
pub fn value(ac: &ActorCritic, s: &VehicleState) -> Result<f64> {
    let z = expectations(
        &ac.ansatz.circuit(),
        &ac.critic_params,
        &encoded(s)?,
        &[Observable::z(0)],
    )?;
    Ok(ac.v_scale * z[0])
}

/// One TD(0) actor-critic step; returns the TD error `δ = r + γV(s') − V(s)`.
///
/// Critic: `θ_c += lr_critic·δ·∇V(s)` (semi-gradient). Actor:
/// `θ_a += lr_actor·δ·∇log π(a|s)` with
/// `∇log π(a|s) = (1/τ) Σ_k (1[k=a] − π_k) ∇⟨Z_k⟩`. All circuit gradients use the
/// parameter-shift rule and are evaluated before either update.
pub fn ac_update(
    ac: &mut ActorCritic,
    s: &VehicleState,
    a: TransferAction,
    r: f64,
    s_next: &VehicleState,
    lr_actor: f64,
    lr_critic: f64,
) -> Result<f64> {
    let circuit = ac.ansatz.circuit();
    let input = encoded(s)?;
    let (v_now, v_jac) =
        param_shift_full(&circuit, &ac.critic_params, &input, &[Observable::z(0)])?;
    let v_next = value(ac, s_next)?;
    let delta = r + ac.gamma * v_next - ac.v_scale * v_now[0];
    if !delta.is_finite() {
        return Err(Error::NonFinite(format!("TD error {delta}")));
    }
    let (z, z_jac) = param_shift_full(&circuit, &ac.actor_params, &input, &policy_observables())?;
    let pi = softmax(&z, ac.tau);

    for (p, g) in ac.critic_params.iter_mut().zip(&v_jac[0]) {
        *p += lr_critic * delta * ac.v_scale * g;
    }
    for (j, p) in ac.actor_params.iter_mut().enumerate() {
        let grad_logp: f64 = (0..N_ACTIONS)
            .map(|k| {
                let indicator = if k == a.index() { 1.0 } else { 0.0 };
                (indicator - pi[k]) * z_jac[k][j]
            })
            .sum::<f64>()
            / ac.tau;
        *p += lr_actor * delta * grad_logp;
    }
    Ok(delta)
}

/// One line of an episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub step: usize,
    pub state: [f64; 4],
    pub action: TransferAction,
    pub reward: f64,
    pub td_error: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::Circuit;

    fn random_ac(seed: u64) -> ActorCritic {
        ActorCritic::init(AgentAnsatz::default(), 1.0, 0.95, 10.0, 1.0, seed).unwrap()
    }

    fn mixed() -> VehicleState {
        VehicleState {
            data_summary: [0.1, 0.4, 0.2, 0.3],
            channel_quality: 0.7,
            neighbor_code: 0.2,
            local_accuracy: 0.9,
        }
    }

    #[test]
    fn encoding_examples() {
        assert_eq!(encode_state(&VehicleState::uniform(0.0)).unwrap(), [0.0; 4]);
        assert_eq!(
            encode_state(&VehicleState::uniform(1.0)).unwrap(),
            [std::f64::consts::PI; 4]
        );
        assert_eq!(
            encode_state(&VehicleState::uniform(0.5)).unwrap(),
            [std::f64::consts::FRAC_PI_2; 4]
        );
        let ket = encoded(&VehicleState::uniform(1.0)).unwrap();
        assert!((ket.probabilities()[15] - 1.0).abs() < 1e-12);
        assert!(encode_state(&VehicleState::uniform(-0.1)).is_err());
    }

    #[test]
    fn zero_params_symmetric_states_are_uniform() {
        let ac = ActorCritic::zeros(AgentAnsatz::default(), 1.0, 0.95, 10.0).unwrap();
        for x in [0.0, 0.3, 0.5, 1.0] {
            let p = policy(&ac, &VehicleState::uniform(x)).unwrap();
            for v in p {
                assert!((v - 1.0 / 3.0).abs() < 1e-12, "{p:?}");
            }
        }
    }

    #[test]
    fn high_temperature_is_uniform_and_policy_is_strict() {
        let mut ac = random_ac(3);
        let p = policy(&ac, &mixed()).unwrap();
        assert!(p.iter().all(|&v| v > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        ac.tau = 1e9;
        for v in policy(&ac, &mixed()).unwrap() {
            assert!((v - 1.0 / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn policy_and_value_match_recomputation() {
        let ac = random_ac(5);
        let s = mixed();
        // oracle: explicit encoding gates prepended to the ansatz, run from |0000⟩
        let mut full = Circuit::<f64>::with_params(4, ac.ansatz.n_params()).unwrap();
        for (w, x) in s.summary().iter().enumerate() {
            full.ry(w, crate::qcore::Angle::Fixed(std::f64::consts::PI * x))
                .unwrap();
        }
        full.extend(&ac.ansatz.circuit()).unwrap();
        let zero = StateVector::basis(4, 0).unwrap();
        let out = full.apply(&zero, &ac.actor_params).unwrap();
        let z: Vec<f64> = (0..3)
            .map(|w| crate::qcore::expect(&out, &Observable::z(w)).unwrap())
            .collect();
        let total: f64 = z.iter().map(|v| v.exp()).sum();
        let p = policy(&ac, &s).unwrap();
        for k in 0..3 {
            assert!((p[k] - z[k].exp() / total).abs() < 1e-12);
        }
        let out = full.apply(&zero, &ac.critic_params).unwrap();
        let v = 10.0 * crate::qcore::expect(&out, &Observable::z(0)).unwrap();
        assert!((value(&ac, &s).unwrap() - v).abs() < 1e-12);
    }

    #[test]
    fn zero_param_value_is_analytic() {
        let ac = ActorCritic::zeros(AgentAnsatz::default(), 1.0, 0.9, 10.0).unwrap();
        let s = VehicleState {
            local_accuracy: 0.3,
            ..VehicleState::uniform(0.2)
        };
        let x0 = s.summary()[0];
        assert!((value(&ac, &s).unwrap() - 10.0 * (std::f64::consts::PI * x0).cos()).abs() < 1e-12);
        assert!(value(&ac, &VehicleState::uniform(0.5)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn zero_td_error_changes_nothing() {
        let mut ac = random_ac(8);
        let s = mixed();
        // reward chosen so that δ = 0 exactly: r = V(s) − γV(s')
        let r = value(&ac, &s).unwrap() - ac.gamma * value(&ac, &s).unwrap();
        let before = ac.clone();
        let delta = ac_update(&mut ac, &s, TransferAction::ReceiveGlobal, r, &s, 0.5, 0.5).unwrap();
        assert!(delta.abs() < 1e-12);
        if delta == 0.0 {
            assert_eq!(ac, before);
        }
        let mut still = before.clone();
        ac_update(
            &mut still,
            &s,
            TransferAction::ReceiveGlobal,
            1.0,
            &s,
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(still, before);
    }

    #[test]
    fn update_follows_finite_difference_gradients() {
        let ac = random_ac(13);
        let s = mixed();
        let a = TransferAction::ShareWithNeighbor;
        let (lr, r) = (1e-3, 0.7);
        let mut stepped = ac.clone();
        let delta = ac_update(&mut stepped, &s, a, r, &s, lr, lr).unwrap();
        let h = 1e-5;
        for j in 0..ac.actor_params.len() {
            let logp = |d: f64| {
                let mut t = ac.clone();
                t.actor_params[j] += d;
                policy(&t, &s).unwrap()[a.index()].ln()
            };
            let fd = (logp(h) - logp(-h)) / (2.0 * h);
            let step = (stepped.actor_params[j] - ac.actor_params[j]) / (lr * delta);
            assert!(
                (fd - step).abs() < 1e-5 * fd.abs().max(1.0),
                "actor {j}: {fd} vs {step}"
            );

            let v = |d: f64| {
                let mut t = ac.clone();
                t.critic_params[j] += d;
                value(&t, &s).unwrap()
            };
            let fd = (v(h) - v(-h)) / (2.0 * h);
            let step = (stepped.critic_params[j] - ac.critic_params[j]) / (lr * delta);
            assert!(
                (fd - step).abs() < 1e-5 * fd.abs().max(1.0),
                "critic {j}: {fd} vs {step}"
            );
        }
    }

    #[test]
    fn non_finite_td_error_aborts() {
        let mut ac = random_ac(1);
        let before = ac.clone();
        let s = mixed();
        assert!(ac_update(
            &mut ac,
            &s,
            TransferAction::FineTuneLocal,
            f64::NAN,
            &s,
            0.1,
            0.1
        )
        .is_err());
        assert_eq!(ac, before);
    }
}
