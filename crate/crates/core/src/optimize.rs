//! Group-relative advantages, the planning-aware advantage, the clipped
//! ratio objective with KL penalty, and Adam ascent.

use serde::{Deserialize, Serialize};

use crate::causal::CausalProfile;
use crate::env::{TaskInput, Trajectory};
use crate::error::{PapoError, Result};
use crate::policy::{PolicyParams, PolicySnapshot};

/// Groups whose reward spread is below this get zero advantage.
pub const DEGENERATE_STD: f64 = 1e-8;

/// `G` trajectories sampled by the old policy under one task input.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub task: TaskInput,
    pub trajectories: Vec<Trajectory>,
    /// Policy input at every step of every trajectory.
    pub windows: Vec<Vec<Vec<f64>>>,
    /// Raw (pre-clip) action draws, the points at which densities are taken.
    pub raw_actions: Vec<Vec<Vec<f64>>>,
    /// `log pi_old(a_t | window_t)` recorded at sampling time.
    pub old_logprobs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn steps(&self, i: usize) -> usize {
        self.trajectories[i].len()
    }
}

/// `(r_i - mean) / std` with population statistics; all zeros when the
/// group's rewards are (numerically) constant.
pub fn group_advantage(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(PapoError::Contract(format!(
            "group advantage needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    let std = var.sqrt();
    if std < DEGENERATE_STD {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageTable {
    pub base: Vec<f64>,
    pub aware: Vec<Vec<f64>>,
    pub eta: f64,
}

impl AdvantageTable {
    /// Trajectory advantage broadcast over every step.
    pub fn broadcast(base: &[f64], lengths: &[usize]) -> Self {
        Self {
            base: base.to_vec(),
            aware: base.iter().zip(lengths).map(|(&a, &n)| vec![a; n]).collect(),
            eta: 0.0,
        }
    }

    pub fn mean_abs(&self) -> f64 {
        let (sum, n) = self
            .aware
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(s, n), a| (s + a.abs(), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// `A_hat_{i,t} = A_i + eta * C_{i,t}` using each profile's dense importance.
pub fn planning_aware_advantage(base: &[f64], profiles: &[CausalProfile], eta: f64) -> Result<AdvantageTable> {
    if base.len() != profiles.len() {
        return Err(PapoError::Contract(format!(
            "{} advantages but {} profiles",
            base.len(),
            profiles.len()
        )));
    }
    let aware = base
        .iter()
        .zip(profiles)
        .map(|(&a, p)| p.dense.iter().map(|&c| a + eta * c).collect())
        .collect();
    Ok(AdvantageTable {
        base: base.to_vec(),
        aware,
        eta,
    })
}

/// `pi_new(a_t | .) / pi_old(a_t | .)` for trajectory `i`, step `t`.
pub fn importance_ratio(policy: &PolicyParams, group: &RolloutGroup, i: usize, t: usize) -> Result<f64> {
    let lp = policy.log_prob(&group.windows[i][t], &group.raw_actions[i][t])?;
    let ratio = (lp - group.old_logprobs[i][t]).exp();
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(PapoError::NonFinite(format!(
            "importance ratio {ratio} at trajectory {i} step {t}"
        )));
    }
    Ok(ratio)
}

/// Hyperparameters of the clipped objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub epsilon: f64,
    pub beta: f64,
}

impl ObjectiveConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.beta >= 0.0) {
            return Err(PapoError::Config(format!(
                "need epsilon > 0 and beta >= 0, got {} and {}",
                self.epsilon, self.beta
            )));
        }
        Ok(())
    }
}

/// Clipped surrogate at one sample: `(value, d value / d rho)`.
///
/// Where the clipped branch is strictly smaller, the ratio has no influence.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

/// Objective value and its gradient with respect to the policy parameters.
#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub value: f64,
    pub gradient: PolicyParams,
}

fn check_group(group: &RolloutGroup) -> Result<()> {
    let g = group.len();
    if g == 0
        || group.windows.len() != g
        || group.raw_actions.len() != g
        || group.old_logprobs.len() != g
        || group.rewards.len() != g
    {
        return Err(PapoError::Contract("rollout group fields have mismatched sizes".into()));
    }
    Ok(())
}

/// Per-sample kernel shared by both objectives: accumulates into `grad` and
/// returns the sample's contribution to the objective.
#[allow(clippy::too_many_arguments)]
fn sample_term(
    policy: &PolicyParams,
    group: &RolloutGroup,
    i: usize,
    t: usize,
    advantage: f64,
    weight: f64,
    cfg: ObjectiveConfig,
    reference: &PolicySnapshot,
    grad: &mut PolicyParams,
) -> Result<f64> {
    let window = &group.windows[i][t];
    let raw = &group.raw_actions[i][t];
    let eval = policy.evaluate(window, raw, Some(reference))?;
    let ratio = (eval.log_prob - group.old_logprobs[i][t]).exp();
    if !ratio.is_finite() || !eval.kl.is_finite() {
        return Err(PapoError::NonFinite(format!(
            "trajectory {i} step {t}: ratio {ratio}, kl {}",
            eval.kl
        )));
    }
    let (surrogate, d_ratio) = clipped_term(ratio, advantage, cfg.epsilon);
    // d rho / d theta = rho * d log pi / d theta
    policy.accumulate_evaluated(
        window,
        raw,
        &eval,
        weight * d_ratio * ratio,
        -weight * cfg.beta,
        Some(reference),
        grad,
    );
    Ok(weight * (surrogate - cfg.beta * eval.kl))
}

/// Planning-aware clipped objective
/// `1/G sum_i 1/T_i sum_t [min(rho A_hat, clip(rho) A_hat) - beta KL]`
/// with its exact gradient (ascent direction).
pub fn papo_objective(
    policy: &PolicyParams,
    group: &RolloutGroup,
    table: &AdvantageTable,
    cfg: ObjectiveConfig,
    reference: &PolicySnapshot,
) -> Result<ObjectiveValue> {
    cfg.validate()?;
    check_group(group)?;
    if table.aware.len() != group.len() {
        return Err(PapoError::Contract("advantage table does not match group size".into()));
    }
    let g = group.len() as f64;
    let mut gradient = policy.zeros_like();
    let mut value = 0.0;
    for i in 0..group.len() {
        let steps = group.steps(i);
        if table.aware[i].len() != steps {
            return Err(PapoError::Contract(format!(
                "advantage row {i} has {} entries for {steps} steps",
                table.aware[i].len()
            )));
        }
        let weight = 1.0 / (g * steps as f64);
        for t in 0..steps {
            value += sample_term(
                policy,
                group,
                i,
                t,
                table.aware[i][t],
                weight,
                cfg,
                reference,
                &mut gradient,
            )?;
        }
    }
    if !value.is_finite() {
        return Err(PapoError::NonFinite(format!("objective value {value}")));
    }
    Ok(ObjectiveValue { value, gradient })
}

/// Plain group-relative objective with one advantage per trajectory.
pub fn grpo_objective(
    policy: &PolicyParams,
    group: &RolloutGroup,
    advantages: &[f64],
    cfg: ObjectiveConfig,
    reference: &PolicySnapshot,
) -> Result<ObjectiveValue> {
    cfg.validate()?;
    check_group(group)?;
    if advantages.len() != group.len() {
        return Err(PapoError::Contract("advantages do not match group size".into()));
    }
    let g = group.len() as f64;
    let mut gradient = policy.zeros_like();
    let mut value = 0.0;
    for (i, &adv) in advantages.iter().enumerate() {
        let steps = group.steps(i);
        let weight = 1.0 / (g * steps as f64);
        for t in 0..steps {
            value += sample_term(policy, group, i, t, adv, weight, cfg, reference, &mut gradient)?;
        }
    }
    if !value.is_finite() {
        return Err(PapoError::NonFinite(format!("objective value {value}")));
    }
    Ok(ObjectiveValue { value, gradient })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }
}

/// One Adam ascent step on flat parameters.
pub fn adam_ascent(params: &mut [f64], gradient: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (k, (p, g)) in params.iter_mut().zip(gradient).enumerate() {
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g;
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        *p += cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam ascent on policy parameters; re-clamps `log_std` afterwards.
pub fn update_step(
    params: &PolicyParams,
    gradient: &PolicyParams,
    state: &AdamState,
    cfg: &AdamConfig,
) -> Result<(PolicyParams, AdamState)> {
    if !params.same_shape(gradient) || state.m.len() != params.num_params() {
        return Err(PapoError::Contract("gradient or optimizer state shape mismatch".into()));
    }
    let mut flat = params.to_flat();
    let mut next_state = state.clone();
    adam_ascent(&mut flat, &gradient.to_flat(), &mut next_state, cfg);
    let mut next = PolicyParams::from_flat(params, &flat)?;
    next.clamp_log_std();
    Ok((next, next_state))
}
