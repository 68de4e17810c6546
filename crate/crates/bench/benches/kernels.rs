use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use papo_bench::{policy_trajectory, solver_trajectory, stageworld_policy};
use papo_core::causal::{CausalEstimator, Perturbation, PerturbationSpec};
use papo_core::env::Environment;
use papo_core::harness::collect_group;
use papo_core::optimize::{group_advantage, papo_objective, planning_aware_advantage, ObjectiveConfig};
use papo_core::planning::{identify, RewardBounds};
use papo_core::policy::{ActionMode, PolicySnapshot};
use papo_core::CausalProfile;

fn policy_kernels(c: &mut Criterion) {
    let (env, params) = stageworld_policy(1);
    let x = vec![0.1; params.input_dim()];
    let raw = vec![0.2, -0.3, 0.5];
    c.bench_function("policy_log_prob", |b| {
        b.iter(|| params.log_prob(black_box(&x), black_box(&raw)))
    });

    let old = PolicySnapshot::of(&params);
    let task = env.task(4, 1).unwrap();
    let group = collect_group(&env, &old, ActionMode::Stochastic, 1, &task, 8, &[0]).unwrap();
    let base = group_advantage(&group.rewards).unwrap();
    let profiles: Vec<CausalProfile> = group
        .trajectories
        .iter()
        .map(|t| CausalProfile::zeros(&[], t.len()))
        .collect();
    let table = planning_aware_advantage(&base, &profiles, 0.15).unwrap();
    let cfg = ObjectiveConfig {
        epsilon: 0.2,
        beta: 0.01,
    };
    c.bench_function("papo_objective_g8", |b| {
        b.iter(|| papo_objective(&params, &group, &table, cfg, &old).unwrap())
    });
    c.bench_function("collect_group_g8", |b| {
        b.iter(|| collect_group(&env, &old, ActionMode::Stochastic, 1, &task, 8, &[1]).unwrap())
    });
}

fn analysis_kernels(c: &mut Criterion) {
    let (env, params) = stageworld_policy(2);
    let traj = solver_trajectory(&env, 7).unwrap();
    c.bench_function("identify", |b| {
        b.iter(|| identify(black_box(&traj), 3, RewardBounds::default()).unwrap())
    });

    let sampled = policy_trajectory(&env, &params, 7).unwrap();
    let task = env.task(7, 3).unwrap();
    let selection = identify(&sampled, 3, RewardBounds::default()).unwrap();
    let perturbation = Perturbation::Random(PerturbationSpec::default());
    let actor = params.actor(ActionMode::Stochastic);
    let est = CausalEstimator {
        env: &env,
        controller: &actor,
        history: 1,
        perturbation: &perturbation,
        key: vec![0],
    };
    c.bench_function("importance_profile_k3_m4", |b| {
        b.iter(|| est.importance_profile(&task, &sampled, &selection, false).unwrap())
    });
}

criterion_group!(benches, policy_kernels, analysis_kernels);
criterion_main!(benches);
