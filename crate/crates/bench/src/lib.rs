//! Fixtures shared by the benchmarks.

use papo_core::env::{rollout_closed_loop, Environment, StageWorld};
use papo_core::policy::{ActionMode, PolicyParams};
use papo_core::rng;
use papo_core::{Result, Trajectory};

/// A freshly initialised policy for StageWorld.
pub fn stageworld_policy(seed: u64) -> (StageWorld, PolicyParams) {
    let env = StageWorld::default();
    let input = PolicyParams::input_dim_for(env.obs_dim(), env.embedding_dim(), 1);
    let mut r = rng::stream(&[seed]);
    let params = PolicyParams::init(input, 64, env.action_dim(), 0.5f64.ln(), &mut r);
    (env, params)
}

/// One full-horizon trajectory produced by the scripted solver.
pub fn solver_trajectory(env: &StageWorld, seed: u64) -> Result<Trajectory> {
    let task = env.task(seed, (seed % 4) as usize)?;
    let mut r = rng::stream(&[seed, 1]);
    Ok(rollout_closed_loop(env, &task, &[], &env.scripted_solver(), 1, &mut r)?.trajectory)
}

/// A trajectory sampled from `params`.
pub fn policy_trajectory(env: &StageWorld, params: &PolicyParams, seed: u64) -> Result<Trajectory> {
    let task = env.task(seed, (seed % 4) as usize)?;
    let mut r = rng::stream(&[seed, 2]);
    let actor = params.actor(ActionMode::Stochastic);
    Ok(rollout_closed_loop(env, &task, &[], &actor, 1, &mut r)?.trajectory)
}
