//! Model-transfer decisions: a vehicle MDP, a quantum actor-critic trained by TD
//! errors with parameter-shift gradients, a frozen tabular fixture with its
//! value-iteration oracle, and an MMD-based domain alignment loss.

mod agent;
mod align;
mod env;
mod tabular;

pub use agent::{
    ac_update, encode_state, policy, value, ActorCritic, AgentAnsatz, EpisodeRecord, AGENT_QUBITS,
    N_ACTIONS, POLICY_WIRES,
};
pub use align::{align_loss, gaussian_mmd2, median_bandwidth, DomainMap, BANDWIDTH_FLOOR};
pub use env::{
    apply_action, evolve_env, step_env, EnvConfig, RewardWeights, TransferAction, VehicleEnv,
    VehicleState,
};
pub use tabular::{
    fixture_agent, fixture_mdp, fixture_states, train_on_mdp, FixtureTraining, TabularMdp,
    TrainConfig, FIXTURE_LAYERS, FIXTURE_TAU,
};
