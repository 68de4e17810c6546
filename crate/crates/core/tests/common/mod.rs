#![allow(dead_code)]

pub mod chain;

use papo_core::env::{Action, TaskInput, Trajectory};
use papo_core::optimize::RolloutGroup;
use papo_core::policy::PolicyParams;
use papo_core::rng::{self, StreamRng};
use rand::Rng;

pub fn rng(key: &[u64]) -> StreamRng {
    rng::stream(key)
}

/// Random weights with larger magnitudes than the default initialisation.
pub fn random_params(r: &mut StreamRng, input: usize, hidden: usize, action: usize) -> PolicyParams {
    let mut p = PolicyParams::zeros(input, hidden, action);
    for tensor in p.tensors_mut() {
        for v in tensor.iter_mut() {
            *v = r.random_range(-0.8..0.8);
        }
    }
    for v in &mut p.log_std {
        *v = r.random_range(-1.0..0.3);
    }
    p
}

pub fn random_vec(r: &mut StreamRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

/// Synthetic group: random windows, raw actions, rewards and old
/// log-probabilities offset from `policy` so that ratios land either well
/// inside the clip interval or well outside it (never on a kink).
pub fn random_group(r: &mut StreamRng, policy: &PolicyParams, g: usize, max_t: usize, epsilon: f64) -> RolloutGroup {
    let input = policy.input_dim();
    let action = policy.action_dim();
    let mut group = RolloutGroup {
        task: TaskInput {
            initial_seed: 0,
            goal_id: 0,
            goal_embedding: vec![],
        },
        trajectories: vec![],
        windows: vec![],
        raw_actions: vec![],
        old_logprobs: vec![],
        rewards: vec![],
    };
    for _ in 0..g {
        let t_len = r.random_range(1..=max_t);
        let windows: Vec<Vec<f64>> = (0..t_len).map(|_| random_vec(r, input, 1.0)).collect();
        let raws: Vec<Vec<f64>> = (0..t_len).map(|_| random_vec(r, action, 1.3)).collect();
        let olds = windows
            .iter()
            .zip(&raws)
            .map(|(w, a)| {
                let lp = policy.log_prob(w, a).unwrap();
                let shift = if r.random_bool(0.5) {
                    r.random_range(-0.5 * epsilon..0.5 * epsilon)
                } else {
                    let s = r.random_range(2.0 * epsilon..4.0 * epsilon);
                    if r.random_bool(0.5) {
                        s
                    } else {
                        -s
                    }
                };
                lp - shift
            })
            .collect();
        let reward = r.random_range(0.0..1.0);
        group.trajectories.push(Trajectory {
            initial_seed: 0,
            goal_id: 0,
            actions: raws.iter().map(|a| Action::clipped(a.clone())).collect(),
            reward,
            success: false,
            observations: vec![],
        });
        group.windows.push(windows);
        group.raw_actions.push(raws);
        group.old_logprobs.push(olds);
        group.rewards.push(reward);
    }
    group
}

/// Central difference of `f` along every flat coordinate of `params`.
pub fn finite_difference(params: &PolicyParams, h: f64, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    let base = params.to_flat();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let fp = f(&PolicyParams::from_flat(params, &plus).unwrap());
            let fm = f(&PolicyParams::from_flat(params, &minus).unwrap());
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
