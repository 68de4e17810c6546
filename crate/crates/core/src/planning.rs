//! Planning-action identification: normalized action-variation magnitude
//! gated by trajectory outcome, followed by a deterministic top-k mask.

use serde::{Deserialize, Serialize};

use crate::env::{Action, Trajectory};
use crate::error::{PapoError, Result};

/// Lower and upper bound of the trajectory reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for RewardBounds {
    fn default() -> Self {
        Self { min: 0.0, max: 1.0 }
    }
}

/// How many steps to select per trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanningConfig {
    /// Fixed `k`; when absent `k = max(k_min, ceil(k_fraction * T))`.
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_fraction: f64,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        Self {
            k: None,
            k_min: 2,
            k_fraction: 0.1,
        }
    }
}

impl PlanningConfig {
    pub fn k_for(&self, len: usize) -> usize {
        self.k
            .unwrap_or_else(|| self.k_min.max((self.k_fraction * len as f64).ceil() as usize))
            .max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == Some(0) || self.k_min == 0 {
            return Err(PapoError::Config("planning k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.k_fraction) {
            return Err(PapoError::Config("k_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningSelection {
    pub u: Vec<f64>,
    pub u_tilde: Vec<f64>,
    pub gate: f64,
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
    pub indices: Vec<usize>,
    /// Stationary trajectory or zero gate: the mask carries no information.
    pub degenerate: bool,
}

/// `u_0 = |a_0|_1 / d`, `u_t = |a_t - a_{t-1}|_1 / d`.
pub fn variation_magnitudes(actions: &[Action]) -> Result<Vec<f64>> {
    let first = actions
        .first()
        .ok_or_else(|| PapoError::Contract("empty action sequence".into()))?;
    let d = first.dim();
    if d == 0 || actions.iter().any(|a| a.dim() != d) {
        return Err(PapoError::Contract("actions must share a nonzero dimension".into()));
    }
    let scale = 1.0 / d as f64;
    let mut u = Vec::with_capacity(actions.len());
    u.push(first.values().iter().map(|v| v.abs()).sum::<f64>() * scale);
    for pair in actions.windows(2) {
        let l1: f64 = pair[1]
            .values()
            .iter()
            .zip(pair[0].values())
            .map(|(a, b)| (a - b).abs())
            .sum();
        u.push(l1 * scale);
    }
    Ok(u)
}

/// Divides by the mean; an all-zero input stays all-zero.
pub fn normalize_variations(u: &[f64]) -> Vec<f64> {
    let mean = u.iter().sum::<f64>() / u.len().max(1) as f64;
    if mean > 0.0 {
        u.iter().map(|v| v / mean).collect()
    } else {
        vec![0.0; u.len()]
    }
}

/// Min-max normalized reward, clamped into `[0, 1]`.
pub fn outcome_gate(reward: f64, bounds: RewardBounds) -> Result<f64> {
    if !(bounds.min < bounds.max) {
        return Err(PapoError::Config(format!(
            "reward bounds [{}, {}] are empty",
            bounds.min, bounds.max
        )));
    }
    Ok(((reward - bounds.min) / (bounds.max - bounds.min)).clamp(0.0, 1.0))
}

pub fn planning_scores(u_tilde: &[f64], gate: f64) -> Vec<f64> {
    u_tilde.iter().map(|v| v * gate).collect()
}

/// Selects `min(k, T)` entries with the largest scores; ties go to the
/// smaller index.
pub fn topk_mask(scores: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut mask = vec![false; scores.len()];
    for &i in order.iter().take(k) {
        mask[i] = true;
    }
    mask
}

pub fn identify(trajectory: &Trajectory, k: usize, bounds: RewardBounds) -> Result<PlanningSelection> {
    let u = variation_magnitudes(&trajectory.actions)?;
    let u_tilde = normalize_variations(&u);
    let gate = outcome_gate(trajectory.reward, bounds)?;
    let scores = planning_scores(&u_tilde, gate);
    let mask = topk_mask(&scores, k.max(1));
    let indices = mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect();
    let degenerate = gate == 0.0 || u_tilde.iter().all(|v| *v == 0.0);
    Ok(PlanningSelection {
        u,
        u_tilde,
        gate,
        scores,
        mask,
        indices,
        degenerate,
    })
}
