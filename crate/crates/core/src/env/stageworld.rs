//! StageWorld: a planar pick-and-place task with an approach, grasp, carry
//! and release structure.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, Environment, RewardMode, TaskInput, Transition};
use crate::error::{PapoError, Result};
use crate::rng::{self, StreamRng};

/// Goal location for each registered goal identifier.
pub const GOAL_POSITIONS: [[f64; 2]; 4] = [[0.15, 0.15], [0.85, 0.15], [0.85, 0.85], [0.15, 0.85]];

const OBS_DIM: usize = 5;
const ACTION_DIM: usize = 3;
const GRIPPER: usize = 2;
const ENV_DOMAIN: u64 = 0x5354_4147;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageWorldConfig {
    pub step_size: f64,
    pub grasp_radius: f64,
    pub goal_radius: f64,
    pub max_horizon: usize,
    pub reward_mode: RewardMode,
    /// Share of the shaped reward reserved for success.
    pub success_bonus: f64,
}

impl Default for StageWorldConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            grasp_radius: 0.08,
            goal_radius: 0.1,
            max_horizon: 30,
            reward_mode: RewardMode::Shaped,
            success_bonus: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageWorldState {
    pub agent_position: [f64; 2],
    pub object_position: [f64; 2],
    pub holding: bool,
    pub goal_position: [f64; 2],
    pub step_count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct StageWorld {
    config: StageWorldConfig,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl StageWorld {
    pub fn new(config: StageWorldConfig) -> Result<Self> {
        let c = &config;
        let positive = [c.step_size, c.grasp_radius, c.goal_radius];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0 && *v <= 1.0)) {
            return Err(PapoError::Config(
                "step_size, grasp_radius and goal_radius must lie in (0, 1]".into(),
            ));
        }
        if c.max_horizon == 0 {
            return Err(PapoError::Config("max_horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&c.success_bonus) {
            return Err(PapoError::Config("success_bonus must lie in [0, 1]".into()));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &StageWorldConfig {
        &self.config
    }

    pub fn with_reward_mode(&self, mode: RewardMode) -> Self {
        let mut config = self.config.clone();
        config.reward_mode = mode;
        Self { config }
    }

    fn observe(state: &StageWorldState) -> Vec<f64> {
        vec![
            2.0 * state.agent_position[0] - 1.0,
            2.0 * state.agent_position[1] - 1.0,
            2.0 * state.object_position[0] - 1.0,
            2.0 * state.object_position[1] - 1.0,
            if state.holding { 1.0 } else { 0.0 },
        ]
    }

    /// Hand-written controller that solves every task: approach with the
    /// gripper open, close once in reach, carry, open inside the goal.
    pub fn scripted_solver(&self) -> ScriptedSolver {
        ScriptedSolver {
            config: self.config.clone(),
        }
    }
}

impl Environment for StageWorld {
    type State = StageWorldState;

    fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn max_horizon(&self) -> usize {
        self.config.max_horizon
    }

    fn num_goals(&self) -> usize {
        GOAL_POSITIONS.len()
    }

    fn reward_mode(&self) -> RewardMode {
        self.config.reward_mode
    }

    fn goal_embedding(&self, goal_id: usize) -> Result<Vec<f64>> {
        if goal_id >= GOAL_POSITIONS.len() {
            return Err(PapoError::Config(format!("unknown goal_id {goal_id}")));
        }
        let mut e = vec![0.0; GOAL_POSITIONS.len()];
        e[goal_id] = 1.0;
        Ok(e)
    }

    fn reset(&self, task: &TaskInput) -> Result<(StageWorldState, Vec<f64>)> {
        self.goal_embedding(task.goal_id)?;
        let goal = GOAL_POSITIONS[task.goal_id];
        let mut rng: StreamRng = rng::stream(&[ENV_DOMAIN, task.initial_seed]);
        let agent = [rng.random_range(0.35..0.65), rng.random_range(0.35..0.65)];
        let object = loop {
            let p = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
            if dist(p, agent) >= 0.2 && dist(p, goal) >= 0.3 {
                break p;
            }
        };
        let state = StageWorldState {
            agent_position: agent,
            object_position: object,
            holding: false,
            goal_position: goal,
            step_count: 0,
        };
        let obs = Self::observe(&state);
        Ok((state, obs))
    }

    fn step(&self, state: &StageWorldState, action: &Action) -> Result<Transition<StageWorldState>> {
        if state.step_count >= self.config.max_horizon {
            return Err(PapoError::Contract(format!(
                "step called at step_count {} with horizon {}",
                state.step_count, self.config.max_horizon
            )));
        }
        action.validate(ACTION_DIM)?;
        let a = action.values();
        let mut next = state.clone();

        // Gripper acts on the pre-move configuration.
        if a[GRIPPER] > 0.0 {
            if !next.holding && dist(next.agent_position, next.object_position) <= self.config.grasp_radius {
                next.holding = true;
            }
        } else {
            next.holding = false;
        }

        let mut moved = [0.0; 2];
        for k in 0..2 {
            let target = (next.agent_position[k] + self.config.step_size * a[k]).clamp(0.0, 1.0);
            moved[k] = target - next.agent_position[k];
            next.agent_position[k] = target;
        }
        if next.holding {
            next.object_position[0] += moved[0];
            next.object_position[1] += moved[1];
        }
        next.step_count += 1;

        let success = self.is_success(&next);
        let done = success || next.step_count == self.config.max_horizon;
        let observation = Self::observe(&next);
        Ok(Transition {
            state: next,
            observation,
            done,
            success,
        })
    }

    fn is_success(&self, state: &StageWorldState) -> bool {
        !state.holding && dist(state.object_position, state.goal_position) <= self.config.goal_radius
    }

    fn trajectory_reward(
        &self,
        initial: &StageWorldState,
        last: &StageWorldState,
        success: bool,
        mode: RewardMode,
    ) -> f64 {
        match mode {
            RewardMode::Sparse => f64::from(u8::from(success)),
            RewardMode::Shaped => {
                if success {
                    return 1.0;
                }
                let reach = 1.0 - (dist(last.agent_position, last.object_position) / 0.5).min(1.0);
                let start_gap = dist(initial.object_position, initial.goal_position).max(1e-9);
                let carry = (1.0 - dist(last.object_position, last.goal_position) / start_gap).clamp(0.0, 1.0);
                let proximity = 0.3 * reach + 0.7 * carry;
                ((1.0 - self.config.success_bonus) * proximity).clamp(0.0, 1.0)
            }
        }
    }
}

/// Proportional pick-and-place controller reading the latest observation of
/// the window.
#[derive(Debug, Clone)]
pub struct ScriptedSolver {
    config: StageWorldConfig,
}

impl ScriptedSolver {
    fn toward(&self, from: [f64; 2], to: [f64; 2]) -> [f64; 2] {
        [
            ((to[0] - from[0]) / self.config.step_size).clamp(-1.0, 1.0),
            ((to[1] - from[1]) / self.config.step_size).clamp(-1.0, 1.0),
        ]
    }

    pub fn decide(&self, window: &[f64]) -> Action {
        let n_goals = GOAL_POSITIONS.len();
        let emb = &window[window.len() - n_goals..];
        let obs = &window[window.len() - n_goals - OBS_DIM..window.len() - n_goals];
        let goal_id = emb.iter().position(|&v| v > 0.5).expect("one-hot goal embedding");
        let goal = GOAL_POSITIONS[goal_id];
        let agent = [(obs[0] + 1.0) / 2.0, (obs[1] + 1.0) / 2.0];
        let object = [(obs[2] + 1.0) / 2.0, (obs[3] + 1.0) / 2.0];
        let holding = obs[4] > 0.5;

        let values = if holding {
            if dist(object, goal) <= 0.5 * self.config.goal_radius {
                vec![0.0, 0.0, -1.0]
            } else {
                let target = [agent[0] + goal[0] - object[0], agent[1] + goal[1] - object[1]];
                let v = self.toward(agent, target);
                vec![v[0], v[1], 1.0]
            }
        } else if dist(agent, object) <= 0.5 * self.config.grasp_radius {
            let target = [agent[0] + goal[0] - object[0], agent[1] + goal[1] - object[1]];
            let v = self.toward(agent, target);
            vec![v[0], v[1], 1.0]
        } else {
            let v = self.toward(agent, object);
            vec![v[0], v[1], -1.0]
        };
        Action::clipped(values)
    }
}

impl super::Controller for ScriptedSolver {
    fn act_raw(&self, window: &[f64], _rng: &mut StreamRng) -> (Action, Vec<f64>) {
        let a = self.decide(window);
        let raw = a.values().to_vec();
        (a, raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{replay_prefix, rollout_closed_loop, rollout_open_loop};

    fn world() -> StageWorld {
        StageWorld::new(StageWorldConfig::default()).unwrap()
    }

    fn act(v: [f64; 3]) -> Action {
        Action::new(v.to_vec()).unwrap()
    }

    #[test]
    fn reset_is_deterministic() {
        let w = world();
        let task = w.task(7, 0).unwrap();
        assert_eq!(w.reset(&task).unwrap(), w.reset(&task).unwrap());
    }

    #[test]
    fn different_seeds_move_the_object() {
        let w = world();
        let (a, _) = w.reset(&w.task(7, 0).unwrap()).unwrap();
        let (b, _) = w.reset(&w.task(8, 0).unwrap()).unwrap();
        assert_ne!(a.object_position, b.object_position);
    }

    #[test]
    fn unknown_goal_is_config_error() {
        let w = world();
        assert!(matches!(w.task(7, 99), Err(PapoError::Config(_))));
        let bogus = TaskInput {
            initial_seed: 7,
            goal_id: 99,
            goal_embedding: vec![],
        };
        assert!(matches!(w.reset(&bogus), Err(PapoError::Config(_))));
    }

    #[test]
    fn zero_action_keeps_agent_in_place() {
        let w = world();
        let (s, _) = w.reset(&w.task(3, 1).unwrap()).unwrap();
        let tr = w.step(&s, &Action::zeros(3)).unwrap();
        assert_eq!(tr.state.agent_position, s.agent_position);
        assert_eq!(tr.state.step_count, 1);
    }

    #[test]
    fn far_grasp_does_not_hold() {
        let w = world();
        let (s, _) = w.reset(&w.task(3, 1).unwrap()).unwrap();
        assert!(dist(s.agent_position, s.object_position) > w.config().grasp_radius);
        let tr = w.step(&s, &act([0.0, 0.0, 1.0])).unwrap();
        assert!(!tr.state.holding);
    }

    #[test]
    fn out_of_bounds_action_rejected() {
        let w = world();
        let (s, _) = w.reset(&w.task(3, 1).unwrap()).unwrap();
        let bad = Action::clipped(vec![0.0, 0.0, 0.0]);
        let mut raw = bad.into_values();
        raw[0] = 1.5;
        let err = w.step(&s, &Action::clipped(raw.clone()));
        assert!(err.is_ok(), "clipped action is valid");
        // Bypass the clipping constructor via deserialization.
        let unchecked: Action = serde_json::from_str("[1.5, 0.0, 0.0]").unwrap();
        assert!(matches!(w.step(&s, &unchecked), Err(PapoError::Contract(_))));
    }

    fn scripted_actions(w: &StageWorld, seed: u64, goal: usize) -> Vec<Action> {
        let task = w.task(seed, goal).unwrap();
        let mut rng = rng::stream(&[0]);
        rollout_closed_loop(w, &task, &[], &w.scripted_solver(), 1, &mut rng)
            .unwrap()
            .trajectory
            .actions
    }

    #[test]
    fn scripted_sequence_solves() {
        let w = world();
        for seed in 0..50 {
            let task = w.task(seed, (seed % 4) as usize).unwrap();
            let actions = scripted_actions(&w, seed, task.goal_id);
            let (traj, truncated) = rollout_open_loop(&w, &task, &actions).unwrap();
            assert!(traj.success, "seed {seed}");
            assert!(!truncated);
            assert_eq!(traj.reward, 1.0);
            // four phases: open approach, close, carry, open
            let grip: Vec<bool> = actions.iter().map(|a| a.values()[2] > 0.0).collect();
            assert!(!grip[0]);
            assert!(!grip[grip.len() - 1]);
            let flips = grip.windows(2).filter(|p| p[0] != p[1]).count();
            assert_eq!(flips, 2, "seed {seed}");
        }
    }

    #[test]
    fn holding_keeps_object_in_reach() {
        let w = world();
        let task = w.task(11, 2).unwrap();
        let actions = scripted_actions(&w, 11, 2);
        for t in 0..=actions.len() {
            let r = replay_prefix(&w, &task, &actions[..t]).unwrap();
            if r.state.holding {
                assert!(dist(r.state.agent_position, r.state.object_position) <= w.config().grasp_radius);
            }
        }
    }

    #[test]
    fn replay_matches_recorded_states() {
        let w = world();
        let task = w.task(5, 3).unwrap();
        let actions = scripted_actions(&w, 5, 3);
        let (traj, _) = rollout_open_loop(&w, &task, &actions).unwrap();
        for t in 0..actions.len() {
            let r = replay_prefix(&w, &task, &actions[..t]).unwrap();
            assert_eq!(r.observations.last().unwrap(), &traj.observations[t]);
            assert!(!r.truncated);
        }
        let (s0, _) = w.reset(&task).unwrap();
        assert_eq!(replay_prefix(&w, &task, &[]).unwrap().state, s0);
    }

    #[test]
    fn replay_past_success_truncates() {
        let w = world();
        let task = w.task(5, 3).unwrap();
        let mut actions = scripted_actions(&w, 5, 3);
        actions.push(Action::zeros(3));
        let r = replay_prefix(&w, &task, &actions).unwrap();
        assert!(r.truncated && r.success);
        assert_eq!(r.applied.len(), actions.len() - 1);
    }

    #[test]
    fn idle_rollout_fails_with_bounded_shaped_reward() {
        let w = world();
        for seed in 0..20 {
            let task = w.task(seed, 0).unwrap();
            let idle = vec![Action::zeros(3); w.max_horizon()];
            let (traj, _) = rollout_open_loop(&w, &task, &idle).unwrap();
            assert!(!traj.success);
            assert!((0.0..1.0).contains(&traj.reward));
            let sparse = w.with_reward_mode(RewardMode::Sparse);
            assert_eq!(rollout_open_loop(&sparse, &task, &idle).unwrap().0.reward, 0.0);
        }
    }

    #[test]
    fn early_open_mid_carry_lowers_reward() {
        let w = world();
        let task = w.task(9, 1).unwrap();
        let actions = scripted_actions(&w, 9, 1);
        let (base, _) = rollout_open_loop(&w, &task, &actions).unwrap();
        let carry: Vec<usize> = (1..actions.len() - 1)
            .filter(|&t| actions[t].values()[2] > 0.0 && actions[t - 1].values()[2] > 0.0)
            .collect();
        let t = carry[carry.len() / 2];
        let mut flipped = actions.clone();
        let mut v = flipped[t].values().to_vec();
        v[2] = -v[2];
        flipped[t] = Action::new(v).unwrap();
        let (pert, _) = rollout_open_loop(&w, &task, &flipped).unwrap();
        assert!(pert.reward < base.reward);
    }
}
