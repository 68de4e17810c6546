//! Deterministic, seedable environments and the replay machinery used by
//! intervention rollouts.
//!
//! All randomness lives in the acting controller; an environment is a pure
//! function of `(task, action sequence)`. Intervention replays therefore
//! restart from `reset` and re-apply the action prefix instead of restoring
//! snapshots.

mod minichain;
mod stageworld;

pub use minichain::{MiniChain, MiniChainConfig, MiniChainState};
pub use stageworld::{StageWorld, StageWorldConfig, StageWorldState, GOAL_POSITIONS};

use serde::{Deserialize, Serialize};

use crate::error::{PapoError, Result};
use crate::rng::StreamRng;

/// A bounded continuous action; every component lies in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(Vec<f64>);

impl Action {
    /// Checked constructor: rejects non-finite or out-of-range components.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || v.abs() > 1.0) {
            return Err(PapoError::Contract(format!(
                "action component {i} = {v} outside [-1, 1]"
            )));
        }
        Ok(Self(values))
    }

    /// Clips every component into `[-1, 1]`. NaN maps to 0.
    pub fn clipped(values: Vec<f64>) -> Self {
        Self(
            values
                .into_iter()
                .map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) })
                .collect(),
        )
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    /// Checks dimension and bounds for an environment with action dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.0.len() != dim {
            return Err(PapoError::Contract(format!(
                "action has dimension {}, environment expects {dim}",
                self.0.len()
            )));
        }
        Action::new(self.0.clone()).map(|_| ())
    }
}

/// The shared task input `x = (o_0, l)`: an initial-state seed plus a goal
/// identifier standing in for the instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInput {
    pub initial_seed: u64,
    pub goal_id: usize,
    pub goal_embedding: Vec<f64>,
}

/// One recorded episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(rename = "seed")]
    pub initial_seed: u64,
    pub goal_id: usize,
    pub actions: Vec<Action>,
    pub reward: f64,
    pub success: bool,
    /// Observation before each action (without goal embedding).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observations: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// 1 on success, 0 otherwise.
    Sparse,
    /// Success bonus plus normalized proximity terms.
    Shaped,
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub state: S,
    pub observation: Vec<f64>,
    pub done: bool,
    pub success: bool,
}

pub trait Environment: Sync {
    type State: Clone + PartialEq + std::fmt::Debug + Send + Sync;

    fn action_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn max_horizon(&self) -> usize;
    fn num_goals(&self) -> usize;
    fn reward_mode(&self) -> RewardMode;

    /// Fixed lookup from goal identifier to embedding.
    fn goal_embedding(&self, goal_id: usize) -> Result<Vec<f64>>;

    fn embedding_dim(&self) -> usize {
        self.num_goals()
    }

    fn task(&self, initial_seed: u64, goal_id: usize) -> Result<TaskInput> {
        Ok(TaskInput {
            initial_seed,
            goal_id,
            goal_embedding: self.goal_embedding(goal_id)?,
        })
    }

    fn reset(&self, task: &TaskInput) -> Result<(Self::State, Vec<f64>)>;

    fn step(&self, state: &Self::State, action: &Action) -> Result<Transition<Self::State>>;

    /// Whether a state satisfies the task-completion event.
    fn is_success(&self, state: &Self::State) -> bool;

    /// Trajectory reward in `[0, 1]` from the episode's first and last states.
    fn trajectory_reward(&self, initial: &Self::State, last: &Self::State, success: bool, mode: RewardMode) -> f64;
}

/// Stacks the most recent `history` observations ending at index `t`
/// (oldest first, left-padded with `observations[0]`), then appends the goal
/// embedding.
pub fn stack_window(observations: &[Vec<f64>], t: usize, history: usize, embedding: &[f64]) -> Vec<f64> {
    let history = history.max(1);
    let obs_dim = observations.first().map_or(0, Vec::len);
    let mut window = Vec::with_capacity(history * obs_dim + embedding.len());
    for lag in (0..history).rev() {
        let idx = t.saturating_sub(lag);
        window.extend_from_slice(&observations[idx]);
    }
    window.extend_from_slice(embedding);
    window
}

/// Anything that can pick an action from a stacked observation window.
pub trait Controller: Sync {
    /// Returns the executed (bounded) action and the raw draw it came from.
    /// For deterministic controllers both coincide.
    fn act_raw(&self, window: &[f64], rng: &mut StreamRng) -> (Action, Vec<f64>);

    fn act(&self, window: &[f64], rng: &mut StreamRng) -> Action {
        self.act_raw(window, rng).0
    }
}

impl<F> Controller for F
where
    F: Fn(&[f64]) -> Action + Sync,
{
    fn act_raw(&self, window: &[f64], _rng: &mut StreamRng) -> (Action, Vec<f64>) {
        let a = self(window);
        let raw = a.values().to_vec();
        (a, raw)
    }
}

/// State reached by re-applying an action prefix from reset.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay<S> {
    pub initial: S,
    pub state: S,
    /// `o_0 ..= o_n` where `n` is the number of actions applied.
    pub observations: Vec<Vec<f64>>,
    /// Actions actually applied (a truncated replay drops the tail).
    pub applied: Vec<Action>,
    pub done: bool,
    pub success: bool,
    /// The episode ended before the whole prefix was consumed.
    pub truncated: bool,
}

/// Reset followed by sequential steps over `actions`.
pub fn replay_prefix<E: Environment>(env: &E, task: &TaskInput, actions: &[Action]) -> Result<Replay<E::State>> {
    if actions.len() > env.max_horizon() {
        return Err(PapoError::Contract(format!(
            "prefix of {} actions exceeds horizon {}",
            actions.len(),
            env.max_horizon()
        )));
    }
    let (initial, obs0) = env.reset(task)?;
    let mut replay = Replay {
        state: initial.clone(),
        initial,
        observations: vec![obs0],
        applied: Vec::with_capacity(actions.len()),
        done: false,
        success: false,
        truncated: false,
    };
    for (i, a) in actions.iter().enumerate() {
        if replay.done {
            replay.truncated = i < actions.len();
            break;
        }
        let tr = env.step(&replay.state, a)?;
        replay.state = tr.state;
        replay.observations.push(tr.observation);
        replay.applied.push(a.clone());
        replay.done = tr.done;
        replay.success = tr.success;
    }
    Ok(replay)
}

fn finish<E: Environment>(env: &E, task: &TaskInput, replay: Replay<E::State>) -> Trajectory {
    let success = replay.success || env.is_success(&replay.state);
    let reward = env.trajectory_reward(&replay.initial, &replay.state, success, env.reward_mode());
    let mut observations = replay.observations;
    observations.truncate(replay.applied.len());
    Trajectory {
        initial_seed: task.initial_seed,
        goal_id: task.goal_id,
        actions: replay.applied,
        reward,
        success,
        observations,
    }
}

/// Executes a fixed action sequence with no policy involvement. The flag is
/// set when the episode terminated before the sequence was exhausted.
pub fn rollout_open_loop<E: Environment>(env: &E, task: &TaskInput, actions: &[Action]) -> Result<(Trajectory, bool)> {
    let replay = replay_prefix(env, task, actions)?;
    let truncated = replay.truncated;
    Ok((finish(env, task, replay), truncated))
}

/// Closed-loop episode: replay `prefix` open-loop, then query `controller`
/// until the episode ends.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub trajectory: Trajectory,
    /// Policy input at every step.
    pub windows: Vec<Vec<f64>>,
    /// Raw (pre-clip) draw at every step; equals the action for prefix steps.
    pub raw_actions: Vec<Vec<f64>>,
}

pub fn rollout_closed_loop<E: Environment, C: Controller + ?Sized>(
    env: &E,
    task: &TaskInput,
    prefix: &[Action],
    controller: &C,
    history: usize,
    rng: &mut StreamRng,
) -> Result<ClosedLoop> {
    let mut replay = replay_prefix(env, task, prefix)?;
    let mut raw_actions: Vec<Vec<f64>> = replay.applied.iter().map(|a| a.values().to_vec()).collect();
    while !replay.done && replay.applied.len() < env.max_horizon() {
        let t = replay.applied.len();
        let window = stack_window(&replay.observations, t, history, &task.goal_embedding);
        let (action, raw) = controller.act_raw(&window, rng);
        let tr = env.step(&replay.state, &action)?;
        replay.state = tr.state;
        replay.observations.push(tr.observation);
        replay.applied.push(action);
        raw_actions.push(raw);
        replay.done = tr.done;
        replay.success = tr.success;
    }
    let windows = (0..replay.applied.len())
        .map(|t| stack_window(&replay.observations, t, history, &task.goal_embedding))
        .collect();
    Ok(ClosedLoop {
        trajectory: finish(env, task, replay),
        windows,
        raw_actions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_bounds_checked() {
        assert!(Action::new(vec![0.5, -1.0]).is_ok());
        assert!(Action::new(vec![1.5]).is_err());
        assert!(Action::new(vec![f64::NAN]).is_err());
        assert_eq!(Action::clipped(vec![2.0, -3.0, 0.2]).values(), &[1.0, -1.0, 0.2]);
    }

    #[test]
    fn window_pads_with_first_observation() {
        let obs = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert_eq!(stack_window(&obs, 0, 3, &[9.0]), vec![1.0, 1.0, 1.0, 9.0]);
        assert_eq!(stack_window(&obs, 2, 2, &[9.0]), vec![2.0, 3.0, 9.0]);
        assert_eq!(stack_window(&obs, 1, 1, &[]), vec![2.0]);
    }

    #[test]
    fn trajectory_json_field_names() {
        let traj = Trajectory {
            initial_seed: 3,
            goal_id: 1,
            actions: vec![Action::new(vec![0.25, -1.0]).unwrap()],
            reward: 0.1,
            success: false,
            observations: vec![],
        };
        let line = serde_json::to_string(&traj).unwrap();
        assert_eq!(
            line,
            r#"{"seed":3,"goal_id":1,"actions":[[0.25,-1.0]],"reward":0.1,"success":false}"#
        );
        let back: Trajectory = serde_json::from_str(&line).unwrap();
        assert_eq!(back, traj);
    }
}
