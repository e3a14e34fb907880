use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::agent::{ac_update, policy, ActorCritic, AgentAnsatz, EpisodeRecord, N_ACTIONS};
use super::env::{TransferAction, VehicleState};
use crate::codec::argmax;
use crate::error::{Error, Result};

/// Deterministic finite MDP with one successor per (state, action).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub next: Vec<[usize; N_ACTIONS]>,
    pub reward: Vec<[f64; N_ACTIONS]>,
    pub gamma: f64,
}

/// The frozen three-state fixture. From every state one action loops with a small
/// reward and one moves towards `s2`, whose self-loop pays the most; the optimal
/// policy (a1, a2, a0) gives up immediate reward in `s0` and `s1` to get there.
pub fn fixture_mdp() -> TabularMdp {
    TabularMdp {
        next: vec![[0, 1, 0], [0, 1, 2], [2, 0, 1]],
        reward: vec![[0.2, 0.0, 0.0], [0.0, 0.2, 0.0], [0.4, 0.0, 0.0]],
        gamma: 0.95,
    }
}

/// Vehicle observations standing for the fixture states.
pub fn fixture_states() -> Vec<VehicleState> {
    vec![
        VehicleState {
            data_summary: [0.1; 4],
            channel_quality: 0.9,
            neighbor_code: 0.1,
            local_accuracy: 0.5,
        },
        VehicleState {
            data_summary: [0.9; 4],
            channel_quality: 0.1,
            neighbor_code: 0.5,
            local_accuracy: 0.1,
        },
        VehicleState {
            data_summary: [0.5; 4],
            channel_quality: 0.5,
            neighbor_code: 0.9,
            local_accuracy: 0.9,
        },
    ]
}

/// Softmax temperature used on the fixture.
pub const FIXTURE_TAU: f64 = 0.5;
/// Ansatz depth used on the fixture.
pub const FIXTURE_LAYERS: usize = 3;

/// Seeded actor-critic set up for the fixture.
pub fn fixture_agent(seed: u64) -> Result<ActorCritic> {
    ActorCritic::init(
        AgentAnsatz {
            layers: FIXTURE_LAYERS,
        },
        FIXTURE_TAU,
        0.95,
        10.0,
        0.1,
        seed,
    )
}

impl TabularMdp {
    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        if n == 0 || self.reward.len() != n {
            return Err(Error::Domain(
                "transition and reward tables disagree".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Domain(format!(
                "discount {} outside [0, 1)",
                self.gamma
            )));
        }
        if self.next.iter().flatten().any(|&s| s >= n) {
            return Err(Error::Domain("successor state out of range".into()));
        }
        if self.reward.iter().flatten().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward table".into()));
        }
        Ok(())
    }

    /// Bellman optimality iteration until the sup-norm change is below `tol`; returns
    /// `V*` and the greedy policy (lowest action among equals).
    pub fn value_iteration(&self, tol: f64) -> (Vec<f64>, Vec<usize>) {
        let n = self.n_states();
        let mut v = vec![0.0; n];
        loop {
            let next: Vec<f64> = (0..n)
                .map(|s| {
                    (0..N_ACTIONS)
                        .map(|a| self.reward[s][a] + self.gamma * v[self.next[s][a]])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let change = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = next;
            if change < tol {
                break;
            }
        }
        let greedy = (0..n)
            .map(|s| {
                let q: Vec<f64> = (0..N_ACTIONS)
                    .map(|a| self.reward[s][a] + self.gamma * v[self.next[s][a]])
                    .collect();
                argmax(&q)
            })
            .collect();
        (v, greedy)
    }

    /// Exact `V^π` of a deterministic policy by solving `(I − γP)V = R`.
    pub fn evaluate_policy(&self, pi: &[usize]) -> Result<Vec<f64>> {
        let n = self.n_states();
        if pi.len() != n || pi.iter().any(|&a| a >= N_ACTIONS) {
            return Err(Error::Domain("policy does not fit the MDP".into()));
        }
        let mut m = DMatrix::<f64>::identity(n, n);
        let mut r = DVector::<f64>::zeros(n);
        for s in 0..n {
            m[(s, self.next[s][pi[s]])] -= self.gamma;
            r[s] = self.reward[s][pi[s]];
        }
        let v = m
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Domain("singular Bellman system".into()))?;
        Ok(v.iter().copied().collect())
    }

    /// Rows `state,action,next_state,reward` under a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,action,next_state,reward\n");
        for s in 0..self.n_states() {
            for a in 0..N_ACTIONS {
                out.push_str(&format!(
                    "{s},{a},{},{}\n",
                    self.next[s][a], self.reward[s][a]
                ));
            }
        }
        out
    }

    pub fn from_csv(text: &str, gamma: f64) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || {
                Error::Format(format!(
                    "line {}: expected state,action,next_state,reward",
                    i + 1
                ))
            };
            if f.len() != 4 {
                return Err(bad());
            }
            let s: usize = f[0].parse().map_err(|_| bad())?;
            let a: usize = f[1].parse().map_err(|_| bad())?;
            let n: usize = f[2].parse().map_err(|_| bad())?;
            let r: f64 = f[3].parse().map_err(|_| bad())?;
            if a >= N_ACTIONS {
                return Err(bad());
            }
            rows.push((s, a, n, r));
        }
        let n_states = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let mut filled = vec![[false; N_ACTIONS]; n_states];
        let mut mdp = TabularMdp {
            next: vec![[0; N_ACTIONS]; n_states],
            reward: vec![[0.0; N_ACTIONS]; n_states],
            gamma,
        };
        for (s, a, n, r) in rows {
            if std::mem::replace(&mut filled[s][a], true) {
                return Err(Error::Format(format!(
                    "duplicate entry for state {s} action {a}"
                )));
            }
            mdp.next[s][a] = n;
            mdp.reward[s][a] = r;
        }
        if filled.iter().flatten().any(|f| !f) {
            return Err(Error::Format("transition table is incomplete".into()));
        }
        mdp.validate()?;
        Ok(mdp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Greedy-policy check interval in episodes (0 disables checks).
    pub eval_every: usize,
    /// Required fraction of the optimal value in every state.
    pub target_fraction: f64,
    /// Stop at the first check that meets the target.
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 5000,
            steps_per_episode: 50,
            lr_actor: 0.02,
            lr_critic: 0.02,
            eval_every: 25,
            target_fraction: 0.95,
            early_stop: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_episode == 0 {
            return Err(Error::Domain("steps_per_episode must be ≥ 1".into()));
        }
        for lr in [self.lr_actor, self.lr_critic] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return Err(Error::Domain(format!(
                    "learning rate {lr} must be finite and ≥ 0"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.target_fraction) {
            return Err(Error::Domain("target_fraction outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureTraining {
    pub episodes_run: usize,
    /// Discounted return collected in each episode.
    pub returns: Vec<f64>,
    /// Mean absolute TD error per episode.
    pub mean_td_error: Vec<f64>,
    /// First checked episode count at which the greedy policy met the target.
    pub reached_at: Option<usize>,
    pub greedy_policy: Vec<usize>,
    pub greedy_values: Vec<f64>,
    pub optimal_policy: Vec<usize>,
    pub optimal_values: Vec<f64>,
}

impl FixtureTraining {
    pub fn meets_target(&self, fraction: f64) -> bool {
        self.greedy_values
            .iter()
            .zip(&self.optimal_values)
            .all(|(g, o)| *g >= fraction * o)
    }
}

fn greedy(ac: &ActorCritic, states: &[VehicleState]) -> Result<Vec<usize>> {
    states.iter().map(|s| Ok(argmax(&policy(ac, s)?))).collect()
}

fn sample_action<R: Rng + ?Sized>(p: &[f64; N_ACTIONS], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    N_ACTIONS - 1
}

/// Trains the actor-critic on a tabular MDP whose states are observed through
/// `states`. Episodes start in a uniformly drawn state and run a fixed number of
/// steps with actions sampled from the current policy.
pub fn train_on_mdp<R: Rng + ?Sized>(
    ac: &mut ActorCritic,
    mdp: &TabularMdp,
    states: &[VehicleState],
    cfg: &TrainConfig,
    rng: &mut R,
    mut log: impl FnMut(&EpisodeRecord),
) -> Result<FixtureTraining> {
    mdp.validate()?;
    cfg.validate()?;
    ac.validate()?;
    if states.len() != mdp.n_states() {
        return Err(Error::Dimension {
            expected: mdp.n_states(),
            got: states.len(),
        });
    }
    let (optimal_values, optimal_policy) = mdp.value_iteration(1e-12);
    let meets = |ac: &ActorCritic| -> Result<(Vec<usize>, Vec<f64>, bool)> {
        let pi = greedy(ac, states)?;
        let v = mdp.evaluate_policy(&pi)?;
        let ok = v
            .iter()
            .zip(&optimal_values)
            .all(|(g, o)| *g >= cfg.target_fraction * o);
        Ok((pi, v, ok))
    };

    let mut returns = Vec::new();
    let mut mean_td_error = Vec::new();
    let mut reached_at = None;
    for episode in 0..cfg.episodes {
        let mut s = rng.random_range(0..mdp.n_states());
        let (mut ret, mut disc, mut td_sum) = (0.0, 1.0, 0.0);
        for step in 0..cfg.steps_per_episode {
            let p = policy(ac, &states[s])?;
            let a = sample_action(&p, rng);
            let (s2, r) = (mdp.next[s][a], mdp.reward[s][a]);
            let action = TransferAction::from_index(a)?;
            let delta = ac_update(
                ac,
                &states[s],
                action,
                r,
                &states[s2],
                cfg.lr_actor,
                cfg.lr_critic,
            )?;
            log(&EpisodeRecord {
                episode,
                step,
                state: states[s].summary(),
                action,
                reward: r,
                td_error: delta,
            });
            ret += disc * r;
            disc *= mdp.gamma;
            td_sum += delta.abs();
            s = s2;
        }
        returns.push(ret);
        mean_td_error.push(td_sum / cfg.steps_per_episode as f64);
        if cfg.eval_every > 0
            && (episode + 1).is_multiple_of(cfg.eval_every)
            && reached_at.is_none()
            && meets(ac)?.2
        {
            reached_at = Some(episode + 1);
            if cfg.early_stop {
                break;
            }
        }
    }
    let (greedy_policy, greedy_values, ok) = meets(ac)?;
    if ok && reached_at.is_none() && cfg.eval_every == 0 {
        reached_at = Some(returns.len());
    }
    Ok(FixtureTraining {
        episodes_run: returns.len(),
        returns,
        mean_td_error,
        reached_at,
        greedy_policy,
        greedy_values,
        optimal_policy,
        optimal_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_iteration_matches_hand_fixed_point() {
        let mdp = fixture_mdp();
        let (v, pi) = mdp.value_iteration(1e-13);
        // s2 loops on 0.4: 0.4/(1−0.95) = 8; s1 → s2: 0.95·8; s0 → s1: 0.95·7.6
        let hand = [7.22, 7.6, 8.0];
        for (a, b) in v.iter().zip(hand) {
            assert!((a - b).abs() < 1e-9, "{v:?}");
        }
        assert_eq!(pi, vec![1, 2, 0]);
        // Bellman optimality: no single deviation improves any state
        for s in 0..3 {
            for a in 0..3 {
                assert!(mdp.reward[s][a] + 0.95 * v[mdp.next[s][a]] <= v[s] + 1e-9);
            }
        }
    }

    #[test]
    fn policy_evaluation_of_loops() {
        let mdp = fixture_mdp();
        let v = mdp.evaluate_policy(&[0, 1, 0]).unwrap();
        assert!(
            (v[0] - 4.0).abs() < 1e-9 && (v[1] - 4.0).abs() < 1e-9 && (v[2] - 8.0).abs() < 1e-9
        );
        assert!(mdp.evaluate_policy(&[0, 1]).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let mdp = fixture_mdp();
        let text = mdp.to_csv();
        assert_eq!(text.lines().count(), 10);
        assert_eq!(TabularMdp::from_csv(&text, 0.95).unwrap(), mdp);
        let missing: String = text.lines().take(9).map(|l| format!("{l}\n")).collect();
        assert!(TabularMdp::from_csv(&missing, 0.95).is_err());
        assert!(TabularMdp::from_csv("state,action,next_state,reward\n0,0,x,1\n", 0.95).is_err());
    }
}
