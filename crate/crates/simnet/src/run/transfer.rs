use std::path::Path;

use qv2x::transfer::{
    ac_update, fixture_agent, fixture_mdp, fixture_states, policy, train_on_mdp, ActorCritic,
    AgentAnsatz, EpisodeRecord, TransferAction, VehicleEnv, VehicleState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{finish, Check};
use crate::artifact::{num, Artifacts, RunLog};
use crate::config::ScenarioConfig;
use crate::error::Result;

/// Order of the phases inside one simulation tick, as recorded in the run log.
pub const TICK_PHASES: [&str; 4] = ["channel", "transmit", "decide", "learn"];

/// Every `LOG_EVERY`-th fixture episode is written step by step.
const LOG_EVERY: usize = 50;

#[derive(Clone, Debug)]
pub struct TransferOutcome {
    /// Episode at which each fixture seed first met the target, if it did.
    pub fixture_reached: Vec<(u64, Option<usize>)>,
    pub vehicle_returns: Vec<f64>,
    pub checks: Vec<Check>,
}

#[derive(Serialize)]
struct Line<'a> {
    seed: u64,
    #[serde(flatten)]
    record: &'a EpisodeRecord,
}

#[derive(Serialize)]
struct VehicleLine {
    vehicle: usize,
    #[serde(flatten)]
    record: EpisodeRecord,
}

fn sample_action(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

/// The report a vehicle sends to its RSU: the seven state components over the
/// vehicle's channel, clamped back to `[0, 1]`.
fn observe(env: &mut VehicleEnv) -> Result<VehicleState> {
    let s = env.state;
    let mut v = s.data_summary.to_vec();
    v.extend([s.channel_quality, s.neighbor_code, s.local_accuracy]);
    let rx: Vec<f64> = env
        .transmit(&v)?
        .into_iter()
        .map(|x| x.clamp(0.0, 1.0))
        .collect();
    Ok(VehicleState {
        data_summary: [rx[0], rx[1], rx[2], rx[3]],
        channel_quality: rx[4],
        neighbor_code: rx[5],
        local_accuracy: rx[6],
    })
}

/// Trains the actor-critic on the tabular fixture for each fixture seed, then runs the
/// vehicle scenario. Each vehicle tick runs channel evolution, the vehicles' state
/// reports to the RSU, the agent's decisions and the learning updates, in that order.
pub fn run_transfer(cfg: &ScenarioConfig, out: &Path) -> Result<TransferOutcome> {
    let hash = cfg.hash();
    let mut artifacts = Artifacts::create(out, &hash)?;
    let mut log = RunLog::new("transfer", &hash);
    let rl = &cfg.rl;

    let mdp = fixture_mdp();
    artifacts.text("fixture_mdp.csv", &mdp.to_csv())?;
    let states = fixture_states();
    let mut fixture_reached = Vec::new();
    let mut fixture_lines = Vec::new();
    for k in 0..rl.fixture_runs {
        let seed = cfg.seed.wrapping_add(k as u64);
        let mut ac = fixture_agent(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lines: Vec<EpisodeRecord> = Vec::new();
        let result = train_on_mdp(&mut ac, &mdp, &states, &rl.fixture, &mut rng, |r| {
            if r.episode % LOG_EVERY == 0 {
                lines.push(r.clone());
            }
        })?;
        let tagged: Vec<Line> = lines.iter().map(|record| Line { seed, record }).collect();
        artifacts.jsonl(&format!("fixture_seed{seed}_episodes.jsonl"), &tagged)?;
        let rows = result
            .returns
            .iter()
            .zip(&result.mean_td_error)
            .enumerate()
            .map(|(e, (r, td))| format!("{e},{},{}", num(*r), num(*td)));
        artifacts.csv(
            &format!("fixture_seed{seed}_returns.csv"),
            "episode,return,mean_abs_td_error",
            rows,
        )?;
        for (e, r) in result.returns.iter().enumerate() {
            log.record("fixture", e as u64, "return", *r);
        }
        fixture_lines.push(format!(
            "fixture seed {seed}: {} episodes, greedy policy {:?} (optimal {:?}), values {:?} vs {:?}, target met at {}",
            result.episodes_run,
            result.greedy_policy,
            result.optimal_policy,
            result.greedy_values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            result.optimal_values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            result.reached_at.map_or("never".to_string(), |e| format!("episode {e}")),
        ));
        fixture_reached.push((seed, result.reached_at));
    }

    let mut ac = ActorCritic::init(
        AgentAnsatz { layers: rl.layers },
        rl.tau,
        rl.gamma,
        rl.v_scale,
        rl.init_scale,
        cfg.seed,
    )?;
    let mut envs: Vec<VehicleEnv> = (0..cfg.n_vehicles)
        .map(|v| VehicleEnv::new(rl.env, rl.weights, cfg.seed.wrapping_add(1000 + v as u64)))
        .collect::<qv2x::Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(7));
    let mut records = Vec::new();
    let mut returns = Vec::new();
    let mut returns_rows = Vec::new();
    let mut tick = 0u64;
    for episode in 0..rl.vehicle_episodes {
        for env in envs.iter_mut() {
            env.reset();
        }
        let mut pending: Vec<Option<(VehicleState, TransferAction, f64)>> = vec![None; envs.len()];
        let (mut ret, mut td_sum, mut td_n) = (0.0, 0.0, 0usize);
        let mut disc = 1.0;
        for step in 0..rl.vehicle_steps {
            let snr: f64 = envs
                .iter_mut()
                .map(|e| e.evolve().map(|_| e.channel.snr_db))
                .sum::<qv2x::Result<f64>>()?;
            log.record(TICK_PHASES[0], tick, "mean_snr_db", snr / envs.len() as f64);

            let obs: Vec<VehicleState> = envs.iter_mut().map(observe).collect::<Result<_>>()?;
            let report_err: f64 = envs
                .iter()
                .zip(&obs)
                .map(|(e, o)| (e.state.local_accuracy - o.local_accuracy).abs())
                .sum();
            log.record(
                TICK_PHASES[1],
                tick,
                "mean_report_error",
                report_err / envs.len() as f64,
            );

            let mut reward_sum = 0.0;
            let mut chosen = Vec::with_capacity(envs.len());
            for (env, o) in envs.iter_mut().zip(&obs) {
                let a = TransferAction::from_index(sample_action(&policy(&ac, o)?, &mut rng))?;
                let r = env.act(a)?;
                reward_sum += r;
                chosen.push((a, r));
            }
            log.record(
                TICK_PHASES[2],
                tick,
                "mean_reward",
                reward_sum / envs.len() as f64,
            );
            ret += disc * reward_sum / envs.len() as f64;
            disc *= rl.gamma;

            let mut td_tick = 0.0;
            for (v, o) in obs.iter().enumerate() {
                if let Some((s, a, r)) = pending[v] {
                    let delta = ac_update(&mut ac, &s, a, r, o, rl.lr_actor, rl.lr_critic)?;
                    td_tick += delta.abs();
                    td_sum += delta.abs();
                    td_n += 1;
                    records.push(VehicleLine {
                        vehicle: v,
                        record: EpisodeRecord {
                            episode,
                            step: step - 1,
                            state: s.summary(),
                            action: a,
                            reward: r,
                            td_error: delta,
                        },
                    });
                }
                let (a, r) = chosen[v];
                pending[v] = Some((*o, a, r));
            }
            log.record(
                TICK_PHASES[3],
                tick,
                "mean_abs_td_error",
                td_tick / envs.len() as f64,
            );
            tick += 1;
        }
        returns.push(ret);
        let td = if td_n > 0 { td_sum / td_n as f64 } else { 0.0 };
        returns_rows.push(format!("{episode},{},{}", num(ret), num(td)));
    }
    artifacts.jsonl("vehicle_episodes.jsonl", &records)?;
    artifacts.csv(
        "vehicle_returns.csv",
        "episode,return,mean_abs_td_error",
        returns_rows,
    )?;

    let met = fixture_reached.iter().filter(|(_, r)| r.is_some()).count();
    let need = (2 * rl.fixture_runs).div_ceil(3);
    let checks = if rl.fixture.episodes == 0 {
        Vec::new()
    } else {
        vec![Check::new(
            "fixture reaches the value-iteration target",
            met >= need,
            format!(
                "{met} of {} seeds reach {:.0}% of the optimal value in every state (need {need})",
                rl.fixture_runs,
                100.0 * rl.fixture.target_fraction
            ),
        )]
    };
    let mut lines = vec![format!("config_hash: {hash}")];
    lines.extend(fixture_lines);
    lines.push(format!(
        "vehicle scenario: {} vehicles, {} episodes of {} ticks",
        cfg.n_vehicles, rl.vehicle_episodes, rl.vehicle_steps
    ));
    if let (Some(first), Some(last)) = (returns.first(), returns.last()) {
        lines.push(format!(
            "vehicle return: first episode {first:.4}, last episode {last:.4}"
        ));
    }
    lines.push(format!("tick phase order: {}", TICK_PHASES.join(" → ")));
    finish(&mut artifacts, &log, "transfer", &lines, &checks)?;
    Ok(TransferOutcome {
        fixture_reached,
        vehicle_returns: returns,
        checks,
    })
}
