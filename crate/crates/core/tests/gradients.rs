mod common;

use common::*;
use papo_core::causal::CausalProfile;
use papo_core::optimize::{group_advantage, papo_objective, planning_aware_advantage, ObjectiveConfig};
use papo_core::policy::{PolicySnapshot, SurrogateSample};
use rand::Rng;

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

#[test]
fn grad_surrogate_matches_central_differences() {
    let mut worst: f64 = 0.0;
    for case in 0..24u64 {
        let mut r = rng(&[11, case]);
        let (input, hidden, action) = (r.random_range(2..7), r.random_range(2..9), r.random_range(1..4));
        let params = random_params(&mut r, input, hidden, action);
        let n = r.random_range(1..12);
        let windows: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, input, 1.0)).collect();
        let raws: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, action, 1.3)).collect();
        let coefs: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let batch: Vec<SurrogateSample> = (0..n)
            .map(|b| SurrogateSample {
                window: &windows[b],
                raw: &raws[b],
                coefficient: coefs[b],
            })
            .collect();
        let analytic = params.grad_surrogate(&batch).unwrap().to_flat();
        let numeric = finite_difference(&params, H, |p| p.surrogate_value(&batch).unwrap());
        let err = max_relative_error(&analytic, &numeric, FLOOR);
        worst = worst.max(err);
        assert!(err < 1e-4, "case {case}: relative error {err}");
    }
    eprintln!("grad_surrogate worst relative error {worst:.2e}");
}

#[test]
fn papo_objective_matches_central_differences() {
    let mut worst: f64 = 0.0;
    for case in 0..24u64 {
        let mut r = rng(&[12, case]);
        let (input, hidden, action) = (r.random_range(2..7), r.random_range(2..9), r.random_range(1..4));
        let params = random_params(&mut r, input, hidden, action);
        let reference = PolicySnapshot::of(&random_params(&mut r, input, hidden, action));
        let cfg = ObjectiveConfig {
            epsilon: 0.2,
            beta: r.random_range(0.0..0.1),
        };
        let group = random_group(&mut r, &params, 4, 10, cfg.epsilon);
        let base = group_advantage(&group.rewards).unwrap();
        let profiles: Vec<CausalProfile> = group
            .trajectories
            .iter()
            .map(|t| {
                let mut p = CausalProfile::zeros(&[], t.len());
                for c in p.dense.iter_mut() {
                    if r.random_bool(0.3) {
                        *c = r.random_range(0.0..1.0);
                    }
                }
                p
            })
            .collect();
        let table = planning_aware_advantage(&base, &profiles, 0.15).unwrap();
        let analytic = papo_objective(&params, &group, &table, cfg, &reference)
            .unwrap()
            .gradient
            .to_flat();
        let numeric = finite_difference(&params, H, |p| {
            papo_objective(p, &group, &table, cfg, &reference).unwrap().value
        });
        let err = max_relative_error(&analytic, &numeric, FLOOR);
        worst = worst.max(err);
        assert!(err < 1e-4, "case {case}: relative error {err}");
    }
    eprintln!("papo_objective worst relative error {worst:.2e}");
}
