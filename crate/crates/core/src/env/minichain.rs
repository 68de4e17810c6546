//! MiniChain: positions `0..=n` on a line, moves in {-1, 0, +1}. Small
//! enough to enumerate every action sequence.

use serde::{Deserialize, Serialize};

use super::{Action, Environment, RewardMode, TaskInput, Transition};
use crate::error::{PapoError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiniChainConfig {
    /// Largest position `N`.
    pub n: usize,
    /// Episode length; the episode always runs exactly this many steps.
    pub horizon: usize,
    pub start: usize,
    pub reward_mode: RewardMode,
}

impl Default for MiniChainConfig {
    fn default() -> Self {
        Self {
            n: 3,
            horizon: 3,
            start: 0,
            reward_mode: RewardMode::Sparse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniChainState {
    pub position: usize,
    pub goal: usize,
    pub step_count: usize,
}

#[derive(Debug, Clone)]
pub struct MiniChain {
    config: MiniChainConfig,
}

impl MiniChain {
    pub fn new(config: MiniChainConfig) -> Result<Self> {
        if config.n == 0 || config.horizon == 0 || config.start > config.n {
            return Err(PapoError::Config(
                "minichain needs n >= 1, horizon >= 1 and start <= n".into(),
            ));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &MiniChainConfig {
        &self.config
    }

    /// Maps a continuous component onto the move it encodes.
    pub fn discretize(value: f64) -> i64 {
        if value >= 0.5 {
            1
        } else if value <= -0.5 {
            -1
        } else {
            0
        }
    }

    /// The three canonical actions `-1, 0, +1` as 1-vectors.
    pub fn moves() -> [Action; 3] {
        [-1.0, 0.0, 1.0].map(|v| Action::new(vec![v]).expect("in range"))
    }

    /// Goal position for a goal identifier: `n - goal_id`.
    pub fn goal_of(&self, goal_id: usize) -> Result<usize> {
        if goal_id >= self.config.n {
            return Err(PapoError::Config(format!("unknown goal_id {goal_id}")));
        }
        Ok(self.config.n - goal_id)
    }

    fn observe(&self, s: &MiniChainState) -> Vec<f64> {
        vec![
            s.position as f64 / self.config.n as f64,
            s.step_count as f64 / self.config.horizon as f64,
        ]
    }
}

impl Environment for MiniChain {
    type State = MiniChainState;

    fn action_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn max_horizon(&self) -> usize {
        self.config.horizon
    }

    fn num_goals(&self) -> usize {
        self.config.n
    }

    fn reward_mode(&self) -> RewardMode {
        self.config.reward_mode
    }

    fn goal_embedding(&self, goal_id: usize) -> Result<Vec<f64>> {
        self.goal_of(goal_id)?;
        let mut e = vec![0.0; self.config.n];
        e[goal_id] = 1.0;
        Ok(e)
    }

    fn reset(&self, task: &TaskInput) -> Result<(MiniChainState, Vec<f64>)> {
        let state = MiniChainState {
            position: self.config.start,
            goal: self.goal_of(task.goal_id)?,
            step_count: 0,
        };
        let obs = self.observe(&state);
        Ok((state, obs))
    }

    fn step(&self, state: &MiniChainState, action: &Action) -> Result<Transition<MiniChainState>> {
        if state.step_count >= self.config.horizon {
            return Err(PapoError::Contract("step past the minichain horizon".into()));
        }
        action.validate(1)?;
        let mv = Self::discretize(action.values()[0]);
        let position = (state.position as i64 + mv).clamp(0, self.config.n as i64) as usize;
        let next = MiniChainState {
            position,
            goal: state.goal,
            step_count: state.step_count + 1,
        };
        let done = next.step_count == self.config.horizon;
        let success = done && next.position == next.goal;
        let observation = self.observe(&next);
        Ok(Transition {
            state: next,
            observation,
            done,
            success,
        })
    }

    fn is_success(&self, state: &MiniChainState) -> bool {
        state.step_count == self.config.horizon && state.position == state.goal
    }

    fn trajectory_reward(
        &self,
        _initial: &MiniChainState,
        last: &MiniChainState,
        success: bool,
        mode: RewardMode,
    ) -> f64 {
        match mode {
            RewardMode::Sparse => f64::from(u8::from(success)),
            RewardMode::Shaped => {
                if success {
                    1.0
                } else {
                    let gap = last.position.abs_diff(last.goal) as f64;
                    0.5 * (1.0 - gap / self.config.n as f64)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::rollout_open_loop;

    #[test]
    fn all_sequences_enumerable() {
        let env = MiniChain::new(MiniChainConfig::default()).unwrap();
        let task = env.task(0, 0).unwrap();
        let moves = MiniChain::moves();
        let mut successes = 0;
        let mut count = 0;
        for a in &moves {
            for b in &moves {
                for c in &moves {
                    let seq = [a.clone(), b.clone(), c.clone()];
                    let (traj, truncated) = rollout_open_loop(&env, &task, &seq).unwrap();
                    assert!(!truncated);
                    count += 1;
                    successes += u32::from(traj.success);
                }
            }
        }
        assert_eq!(count, 27);
        // only (+1, +1, +1) reaches 3 from 0 in three moves
        assert_eq!(successes, 1);
    }

    #[test]
    fn discretization_thresholds() {
        assert_eq!(MiniChain::discretize(0.49), 0);
        assert_eq!(MiniChain::discretize(0.5), 1);
        assert_eq!(MiniChain::discretize(-0.7), -1);
    }

    #[test]
    fn goal_lookup() {
        let env = MiniChain::new(MiniChainConfig::default()).unwrap();
        assert_eq!(env.goal_of(0).unwrap(), 3);
        assert!(env.task(0, 3).is_err());
    }
}
