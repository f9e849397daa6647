//! The finite MDP over grid cells: four cardinal actions, deterministic
//! stay-on-boundary transitions, value iteration with annealed softmax,
//! state-visitation propagation, trajectory sampling and a brute-force
//! trajectory enumerator for tiny instances.

mod enumerate;
pub mod export;
mod grid;
mod plan;
mod svf;
mod world;

pub use enumerate::{enumerate_trajectory_distribution, EnumeratedPath, MAX_ENUMERATION_STEPS};
pub use grid::{Action, Cell, GridMap, GridShape, Policy};
pub use plan::{annealed_softmax, value_iteration, Plan, PlannerConfig, VALUE_SENTINEL};
pub use svf::{
    compute_svf, rollout, sample_trajectory, state_distribution, Rollout, StateVisitation,
};
pub use world::{channel, GridWorld, ENV_CHANNELS, MIN_WORLD_EXTENT};
