//! Causal importance of planning actions, estimated with intervention
//! rollouts.
//!
//! * sufficiency: replay the prefix up to `t` with the action kept or
//!   perturbed, let the controller continue, compare mean rewards;
//! * necessity: replay the whole recorded sequence open-loop with the action
//!   kept or replaced, compare rewards;
//! * overall: harmonic combination of the two.
//!
//! Every Monte Carlo sample draws from its own stream keyed by
//! `(key.., step, branch, sample)`, so estimates are independent of the order
//! in which steps or trajectories are processed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    replay_prefix, rollout_closed_loop, rollout_open_loop, Action, Controller, Environment, TaskInput, Trajectory,
};
use crate::error::{PapoError, Result};
use crate::planning::PlanningSelection;
use crate::rng::{self, StreamRng};

const BRANCH_SUFF_KEPT: u64 = 0;
const BRANCH_SUFF_PERTURBED: u64 = 1;
// Sufficiency and necessity share the perturbation draws at a step.
const BRANCH_DRAW: u64 = 3;

/// Random perturbation rule for `a_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Half-width of the uniform noise on continuous dimensions.
    pub delta: f64,
    /// Negate the last (gripper) dimension instead of noising it.
    pub gripper_flip: bool,
    /// Monte Carlo rollouts per expectation.
    pub samples: usize,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            delta: 0.5,
            gripper_flip: true,
            samples: 4,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(PapoError::Config(format!("delta {} outside [0, 1]", self.delta)));
        }
        if self.samples == 0 {
            return Err(PapoError::Config("perturbation samples must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn perturb_action(a: &Action, spec: &PerturbationSpec, rng: &mut StreamRng) -> Action {
    let d = a.dim();
    let values = a
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if spec.gripper_flip && i + 1 == d {
                -v
            } else if spec.delta > 0.0 {
                v + rng.random_range(-spec.delta..spec.delta)
            } else {
                v
            }
        })
        .collect();
    Action::clipped(values)
}

/// Where perturbed actions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    Random(PerturbationSpec),
    /// Sample `j` uses the `j`-th listed action; `M` equals the list length.
    Exhaustive(Vec<Action>),
}

impl Perturbation {
    pub fn samples(&self) -> usize {
        match self {
            Perturbation::Random(spec) => spec.samples,
            Perturbation::Exhaustive(set) => set.len(),
        }
    }

    fn draw(&self, a: &Action, j: usize, rng: &mut StreamRng) -> Action {
        match self {
            Perturbation::Random(spec) => perturb_action(a, spec, rng),
            Perturbation::Exhaustive(set) => set[j].clone(),
        }
    }
}

/// One sufficiency or necessity estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchEstimate {
    /// `max(0, kept - perturbed)`.
    pub value: f64,
    pub kept: f64,
    pub perturbed: f64,
    pub rollouts: usize,
    /// The recorded prefix terminated before `t`; `value` is 0.
    pub truncated: bool,
}

impl BranchEstimate {
    fn truncated(rollouts: usize) -> Self {
        Self {
            value: 0.0,
            kept: 0.0,
            perturbed: 0.0,
            rollouts,
            truncated: true,
        }
    }
}

/// Harmonic combination `2 s n / (s + n)`, defined as 0 when `s + n = 0`.
pub fn overall(suff: f64, nec: f64) -> f64 {
    let sum = suff + nec;
    if sum > 0.0 {
        2.0 * suff * nec / sum
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CausalProfile {
    pub steps: Vec<usize>,
    pub suff: Vec<f64>,
    pub nec: Vec<f64>,
    pub overall: Vec<f64>,
    /// `overall` scattered to trajectory length, zero at non-selected steps.
    #[serde(skip)]
    pub dense: Vec<f64>,
    #[serde(skip)]
    pub rollouts: usize,
}

impl CausalProfile {
    /// All-zero profile over the selected steps.
    pub fn zeros(steps: &[usize], len: usize) -> Self {
        Self {
            steps: steps.to_vec(),
            suff: vec![0.0; steps.len()],
            nec: vec![0.0; steps.len()],
            overall: vec![0.0; steps.len()],
            dense: vec![0.0; len],
            rollouts: 0,
        }
    }

    /// Rebuilds the profile with per-step importance replaced, e.g. for
    /// ablations that keep only one causal factor.
    pub fn with_importance(&self, len: usize, importance: impl Fn(f64, f64) -> f64) -> Self {
        let overall: Vec<f64> = self
            .suff
            .iter()
            .zip(&self.nec)
            .map(|(&s, &n)| importance(s, n))
            .collect();
        let mut dense = vec![0.0; len];
        for (&t, &c) in self.steps.iter().zip(&overall) {
            dense[t] = c;
        }
        Self {
            steps: self.steps.clone(),
            suff: self.suff.clone(),
            nec: self.nec.clone(),
            overall,
            dense,
            rollouts: self.rollouts,
        }
    }

    /// Rebuilds `dense` for a trajectory of length `len` (after deserialization).
    pub fn densify(&mut self, len: usize) {
        self.dense = vec![0.0; len];
        for (&t, &c) in self.steps.iter().zip(&self.overall) {
            if t < len {
                self.dense[t] = c;
            }
        }
    }
}

/// Intervention-rollout estimator bound to an environment, a continuation
/// controller and a perturbation source.
pub struct CausalEstimator<'a, E: Environment, C: Controller + ?Sized> {
    pub env: &'a E,
    pub controller: &'a C,
    /// Observation stacking depth used when the controller continues.
    pub history: usize,
    pub perturbation: &'a Perturbation,
    /// Stream key prefix, e.g. `(run seed, trajectory id)`.
    pub key: Vec<u64>,
}

impl<E: Environment, C: Controller + ?Sized> CausalEstimator<'_, E, C> {
    fn stream(&self, t: usize, branch: u64, j: usize) -> StreamRng {
        let mut key = Vec::with_capacity(self.key.len() + 4);
        key.push(rng::domain::CAUSAL);
        key.extend_from_slice(&self.key);
        key.extend_from_slice(&[t as u64, branch, j as u64]);
        rng::stream(&key)
    }

    fn check_step(&self, trajectory: &Trajectory, t: usize) -> Result<()> {
        if t >= trajectory.len() {
            return Err(PapoError::Contract(format!(
                "step {t} outside trajectory of length {}",
                trajectory.len()
            )));
        }
        Ok(())
    }

    /// Expected-reward gain from keeping `a_t` in the prefix versus perturbing it,
    /// with the controller generating the continuation.
    pub fn sufficiency(&self, task: &TaskInput, trajectory: &Trajectory, t: usize) -> Result<BranchEstimate> {
        self.check_step(trajectory, t)?;
        let m = self.perturbation.samples();
        let actions = &trajectory.actions;
        let prior = replay_prefix(self.env, task, &actions[..t])?;
        if prior.done {
            return Ok(BranchEstimate::truncated(0));
        }

        let mut kept = 0.0;
        for j in 0..m {
            let mut rng = self.stream(t, BRANCH_SUFF_KEPT, j);
            let run = rollout_closed_loop(self.env, task, &actions[..=t], self.controller, self.history, &mut rng)?;
            kept += run.trajectory.reward;
        }
        let mut perturbed = 0.0;
        let mut prefix = actions[..=t].to_vec();
        for j in 0..m {
            let mut draw_rng = self.stream(t, BRANCH_DRAW, j);
            prefix[t] = self.perturbation.draw(&actions[t], j, &mut draw_rng);
            let mut rng = self.stream(t, BRANCH_SUFF_PERTURBED, j);
            let run = rollout_closed_loop(self.env, task, &prefix, self.controller, self.history, &mut rng)?;
            perturbed += run.trajectory.reward;
        }
        let kept = kept / m as f64;
        let perturbed = perturbed / m as f64;
        Ok(BranchEstimate {
            value: (kept - perturbed).max(0.0),
            kept,
            perturbed,
            rollouts: 2 * m,
            truncated: false,
        })
    }

    /// Reward drop when `a_t` is replaced inside the otherwise fixed sequence.
    pub fn necessity(&self, task: &TaskInput, trajectory: &Trajectory, t: usize) -> Result<BranchEstimate> {
        self.check_step(trajectory, t)?;
        let m = self.perturbation.samples();
        let (kept_run, truncated) = rollout_open_loop(self.env, task, &trajectory.actions)?;
        if truncated && kept_run.len() <= t {
            return Ok(BranchEstimate::truncated(1));
        }
        let kept = kept_run.reward;
        let mut perturbed = 0.0;
        let mut seq = trajectory.actions.clone();
        for j in 0..m {
            let mut draw_rng = self.stream(t, BRANCH_DRAW, j);
            seq[t] = self.perturbation.draw(&trajectory.actions[t], j, &mut draw_rng);
            perturbed += rollout_open_loop(self.env, task, &seq)?.0.reward;
        }
        let perturbed = perturbed / m as f64;
        Ok(BranchEstimate {
            value: (kept - perturbed).max(0.0),
            kept,
            perturbed,
            rollouts: m + 1,
            truncated: false,
        })
    }

    /// Sufficiency, necessity and overall importance at every selected step.
    /// With `skip_zero_gate`, a zero-gate selection yields an all-zero
    /// profile without any rollouts.
    pub fn importance_profile(
        &self,
        task: &TaskInput,
        trajectory: &Trajectory,
        selection: &PlanningSelection,
        skip_zero_gate: bool,
    ) -> Result<CausalProfile> {
        let len = trajectory.len();
        if selection.mask.len() != len {
            return Err(PapoError::Contract(format!(
                "selection covers {} steps, trajectory has {len}",
                selection.mask.len()
            )));
        }
        if skip_zero_gate && selection.gate == 0.0 {
            return Ok(CausalProfile::zeros(&selection.indices, len));
        }
        let mut profile = CausalProfile::zeros(&selection.indices, len);
        for (slot, &t) in selection.indices.iter().enumerate() {
            let s = self.sufficiency(task, trajectory, t)?;
            let n = self.necessity(task, trajectory, t)?;
            profile.suff[slot] = s.value;
            profile.nec[slot] = n.value;
            profile.overall[slot] = overall(s.value, n.value);
            profile.dense[t] = profile.overall[slot];
            profile.rollouts += s.rollouts + n.rollouts;
        }
        Ok(profile)
    }
}

/// Exact probabilities of causation for one action on an enumerable
/// environment with a deterministic continuation controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnsEstimate {
    /// `P(E_do(a_t) = 1 | E(A_bar_t) = 0)`; `None` when no perturbed sequence fails.
    pub p_suff: Option<f64>,
    /// `P(E_do(a_bar_t) = 0 | E(A) = 1)`; `None` when `A` itself fails.
    pub p_nec: Option<f64>,
    /// `P(E(A_bar_t) = 0)` under the uniform measure over the perturbation set.
    pub weight_fail: f64,
    /// `P(E(A) = 1)`, 0 or 1 for a fixed sequence.
    pub weight_success: f64,
    /// `p_suff * weight_fail + p_nec * weight_success`; undefined terms count as 0.
    pub combined: f64,
}

/// Enumerates every listed replacement of `a_t`.
///
/// The perturbed sequence `A_bar_t` and the necessity intervention are
/// replayed open-loop. The sufficiency intervention `do(a_t)` keeps the
/// prefix `a_0..=a_t` and lets the (deterministic) controller generate the
/// rest, so it answers whether the action supports a successful continuation.
pub fn pns_probabilities<E: Environment, C: Controller + ?Sized>(
    env: &E,
    controller: &C,
    history: usize,
    task: &TaskInput,
    trajectory: &Trajectory,
    t: usize,
    perturbation_set: &[Action],
) -> Result<PnsEstimate> {
    if t >= trajectory.len() {
        return Err(PapoError::Contract(format!("step {t} outside trajectory")));
    }
    if perturbation_set.is_empty() {
        return Err(PapoError::Contract("empty perturbation set".into()));
    }
    let actions = &trajectory.actions;
    let base_success = rollout_open_loop(env, task, actions)?.0.success;

    let mut rng = rng::stream(&[rng::domain::CAUSAL, u64::MAX]);
    let do_kept_success = rollout_closed_loop(env, task, &actions[..=t], controller, history, &mut rng)?
        .trajectory
        .success;

    let mut failing = 0usize;
    for alt in perturbation_set {
        let mut seq = actions.clone();
        seq[t] = alt.clone();
        if !rollout_open_loop(env, task, &seq)?.0.success {
            failing += 1;
        }
    }
    let n = perturbation_set.len() as f64;
    let weight_fail = failing as f64 / n;
    let weight_success = f64::from(u8::from(base_success));

    // Within the failing worlds the intervention outcome is the same for
    // every replacement: the controller is deterministic.
    let p_suff = (failing > 0).then(|| f64::from(u8::from(do_kept_success)));
    let p_nec = base_success.then_some(weight_fail);

    let combined = p_suff.unwrap_or(0.0) * weight_fail + p_nec.unwrap_or(0.0) * weight_success;
    Ok(PnsEstimate {
        p_suff,
        p_nec,
        weight_fail,
        weight_success,
        combined,
    })
}
