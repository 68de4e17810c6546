//! Rollout collection, the training loop, evaluation, offline analysis and
//! ablation sweeps.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{Ablation, CausalSection, EnvKind, EnvSection, OptimizeSection, PolicySection, RunConfig, RunSection};

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal::{overall, CausalEstimator, CausalProfile, Perturbation};
use crate::env::{rollout_closed_loop, Controller, Environment, MiniChain, StageWorld, TaskInput, Trajectory};
use crate::error::{PapoError, Result};
use crate::optimize::{
    group_advantage, grpo_objective, papo_objective, planning_aware_advantage, update_step, AdamState, AdvantageTable,
    RolloutGroup,
};
use crate::planning::{identify, PlanningSelection, RewardBounds};
use crate::policy::{ActionMode, PolicyParams, PolicySnapshot};
use crate::rng::{self, domain};

/// Training task seeds have this bit clear, evaluation seeds have it set.
pub const EVAL_SEED_BIT: u64 = 1 << 63;

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: usize,
    pub mean_group_reward: f64,
    pub eval_success_rate: f64,
    pub mean_abs_advantage: f64,
    /// Planning steps whose importance entering the advantage is positive.
    pub planning_steps_positive: usize,
    /// Cumulative environment rollouts: group sampling plus intervention rollouts.
    pub rollouts: u64,
    pub wall_clock_seconds: f64,
}

impl MetricsRecord {
    /// The record without its timing field, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRecord>,
    pub initial_params: PolicyParams,
    pub params: PolicyParams,
}

/// Task input for group `group` of round `round`.
pub fn training_task<E: Environment>(env: &E, run_seed: u64, round: usize, group: usize) -> Result<TaskInput> {
    let key = [domain::TASK, run_seed, round as u64, group as u64];
    let seed = rng::mix(&key) & !EVAL_SEED_BIT;
    let goal = (rng::mix(&[domain::TASK, run_seed, round as u64, group as u64, 1]) % env.num_goals() as u64) as usize;
    env.task(seed, goal)
}

/// Held-out evaluation tasks; their seeds never collide with training seeds.
pub fn evaluation_tasks<E: Environment>(env: &E, count: usize) -> Result<Vec<TaskInput>> {
    (0..count)
        .map(|j| env.task(EVAL_SEED_BIT | j as u64, j % env.num_goals()))
        .collect()
}

pub fn initial_params<E: Environment>(env: &E, config: &RunConfig) -> PolicyParams {
    let input = PolicyParams::input_dim_for(env.obs_dim(), env.embedding_dim(), config.policy.history);
    let mut rng = rng::stream(&[domain::INIT, config.run.seed]);
    PolicyParams::init(
        input,
        config.policy.hidden,
        env.action_dim(),
        config.policy.log_std_init,
        &mut rng,
    )
}

/// `G` closed-loop rollouts of the old policy from one task input, with
/// per-rollout streams keyed by `key` and the rollout index.
pub fn collect_group<E: Environment>(
    env: &E,
    old: &PolicySnapshot,
    mode: ActionMode,
    history: usize,
    task: &TaskInput,
    group_size: usize,
    key: &[u64],
) -> Result<RolloutGroup> {
    if group_size < 2 {
        return Err(PapoError::Contract("group size must be >= 2".into()));
    }
    let actor = old.params().actor(mode);
    let runs: Vec<_> = (0..group_size)
        .into_par_iter()
        .map(|i| {
            let mut k = vec![domain::ROLLOUT];
            k.extend_from_slice(key);
            k.push(i as u64);
            let mut rng = rng::stream(&k);
            let run = rollout_closed_loop(env, task, &[], &actor, history, &mut rng)?;
            let logprobs = run
                .windows
                .iter()
                .zip(&run.raw_actions)
                .map(|(w, a)| old.params().log_prob(w, a))
                .collect::<Result<Vec<f64>>>()?;
            Ok((run, logprobs))
        })
        .collect::<Result<_>>()?;

    let mut group = RolloutGroup {
        task: task.clone(),
        trajectories: Vec::with_capacity(group_size),
        windows: Vec::with_capacity(group_size),
        raw_actions: Vec::with_capacity(group_size),
        old_logprobs: Vec::with_capacity(group_size),
        rewards: Vec::with_capacity(group_size),
    };
    for (run, logprobs) in runs {
        group.rewards.push(run.trajectory.reward);
        group.trajectories.push(run.trajectory);
        group.windows.push(run.windows);
        group.raw_actions.push(run.raw_actions);
        group.old_logprobs.push(logprobs);
    }
    Ok(group)
}

/// Fraction of successful episodes over `tasks x episodes` rollouts of `controller`.
pub fn evaluate<E: Environment, C: Controller + ?Sized>(
    env: &E,
    controller: &C,
    history: usize,
    tasks: &[TaskInput],
    episodes: usize,
    key: &[u64],
) -> Result<f64> {
    if episodes == 0 {
        return Err(PapoError::Contract("episodes_per_task must be >= 1".into()));
    }
    if tasks.is_empty() {
        return Ok(0.0);
    }
    let successes: usize = tasks
        .par_iter()
        .enumerate()
        .map(|(j, task)| {
            let mut hits = 0;
            for e in 0..episodes {
                let mut k = vec![domain::EVAL];
                k.extend_from_slice(key);
                k.extend_from_slice(&[j as u64, e as u64]);
                let mut rng = rng::stream(&k);
                if rollout_closed_loop(env, task, &[], controller, history, &mut rng)?
                    .trajectory
                    .success
                {
                    hits += 1;
                }
            }
            Ok(hits)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(successes as f64 / (tasks.len() * episodes) as f64)
}

/// Replaces the harmonic importance according to the ablation mode.
fn effective_profile(profile: &CausalProfile, len: usize, mode: Ablation) -> CausalProfile {
    match mode {
        Ablation::Papo => profile.with_importance(len, overall),
        Ablation::NoSuff => profile.with_importance(len, |_, n| n),
        Ablation::NoNec => profile.with_importance(len, |s, _| s),
        Ablation::Grpo => CausalProfile::zeros(&profile.steps, len),
    }
}

/// Per-trajectory planning selection and causal profile for one group.
fn profile_group<E: Environment>(
    env: &E,
    policy: &PolicyParams,
    config: &RunConfig,
    group: &RolloutGroup,
    key: &[u64],
    estimate: bool,
) -> Result<Vec<(PlanningSelection, CausalProfile)>> {
    let perturbation = Perturbation::Random(config.causal.spec());
    let actor = policy.actor(ActionMode::Stochastic);
    group
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(i, traj)| {
            let k = config.planning.k_for(traj.len());
            let selection = identify(traj, k, RewardBounds::default())?;
            let profile = if estimate {
                let mut stream_key = key.to_vec();
                stream_key.push(i as u64);
                let estimator = CausalEstimator {
                    env,
                    controller: &actor,
                    history: config.policy.history,
                    perturbation: &perturbation,
                    key: stream_key,
                };
                estimator.importance_profile(&group.task, traj, &selection, config.causal.skip_zero_gate)?
            } else {
                CausalProfile::zeros(&selection.indices, traj.len())
            };
            Ok((selection, profile))
        })
        .collect()
}

struct PreparedGroup {
    group: RolloutGroup,
    base: Vec<f64>,
    table: AdvantageTable,
}

fn train_in<E: Environment>(env: &E, config: &RunConfig) -> Result<TrainOutcome> {
    let started = Instant::now();
    let opt = &config.optimize;
    let seed = config.run.seed;
    let mode = config.run.ablation;
    let history = config.policy.history;
    let eta = if mode == Ablation::Grpo { 0.0 } else { opt.eta };
    // With eta = 0 the importance cannot reach the advantage.
    let estimate = mode != Ablation::Grpo && eta > 0.0;

    let initial = initial_params(env, config);
    let mut params = initial.clone();
    let reference = PolicySnapshot::of(&initial);
    let mut adam = AdamState::new(params.num_params());
    let eval_tasks = evaluation_tasks(env, config.run.eval_tasks)?;
    let mut rollouts: u64 = 0;
    let mut metrics = Vec::with_capacity(opt.rounds);

    for round in 0..opt.rounds {
        let fail = |e: PapoError| e.context(&format!("round {round} ({})", mode.name()));
        let old = PolicySnapshot::of(&params);
        let mut prepared = Vec::with_capacity(opt.groups_per_round);
        let mut planning_positive = 0usize;
        let mut reward_sum = 0.0;
        let mut reward_count = 0usize;
        for g in 0..opt.groups_per_round {
            let task = training_task(env, seed, round, g).map_err(fail)?;
            let key = [seed, round as u64, g as u64];
            let group =
                collect_group(env, &old, ActionMode::Stochastic, history, &task, opt.group_size, &key).map_err(fail)?;
            rollouts += group.len() as u64;
            reward_sum += group.rewards.iter().sum::<f64>();
            reward_count += group.len();

            let base = group_advantage(&group.rewards).map_err(fail)?;
            let table = if estimate {
                let analyses = profile_group(env, &params, config, &group, &key, true).map_err(fail)?;
                let profiles: Vec<CausalProfile> = analyses
                    .iter()
                    .zip(&group.trajectories)
                    .map(|((_, p), traj)| {
                        rollouts += p.rollouts as u64;
                        effective_profile(p, traj.len(), mode)
                    })
                    .collect();
                planning_positive += profiles
                    .iter()
                    .map(|p| p.overall.iter().filter(|c| **c > 0.0).count())
                    .sum::<usize>();
                planning_aware_advantage(&base, &profiles, eta).map_err(fail)?
            } else {
                let lengths: Vec<usize> = group.trajectories.iter().map(Trajectory::len).collect();
                AdvantageTable::broadcast(&base, &lengths)
            };
            prepared.push(PreparedGroup { group, base, table });
        }

        let scale = 1.0 / prepared.len() as f64;
        for _ in 0..opt.epochs {
            let mut gradient = params.zeros_like();
            for p in &prepared {
                let obj = if mode == Ablation::Grpo {
                    grpo_objective(&params, &p.group, &p.base, opt.objective(), &reference)
                } else {
                    papo_objective(&params, &p.group, &p.table, opt.objective(), &reference)
                }
                .map_err(fail)?;
                gradient.add_scaled(&obj.gradient, scale);
            }
            let (next, state) = update_step(&params, &gradient, &adam, &opt.adam()).map_err(fail)?;
            params = next;
            adam = state;
        }

        let mean_abs = prepared.iter().map(|p| p.table.mean_abs()).sum::<f64>() * scale;
        let actor = params.actor(ActionMode::Stochastic);
        let success = evaluate(
            env,
            &actor,
            history,
            &eval_tasks,
            config.run.eval_episodes,
            &[seed, round as u64],
        )
        .map_err(fail)?;
        metrics.push(MetricsRecord {
            round,
            mean_group_reward: reward_sum / reward_count.max(1) as f64,
            eval_success_rate: success,
            mean_abs_advantage: mean_abs,
            planning_steps_positive: planning_positive,
            rollouts,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainOutcome {
        metrics,
        initial_params: initial,
        params,
    })
}

/// Runs the configured number of training rounds.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    match config.env.kind {
        EnvKind::StageWorld => train_in(&StageWorld::new(config.env.stageworld())?, config),
        EnvKind::MiniChain => train_in(&MiniChain::new(config.env.minichain())?, config),
    }
}

/// Success rate of `params` on `config.run.final_eval_tasks` held-out tasks.
pub fn final_success_rate(config: &RunConfig, params: &PolicyParams, tasks: usize, episodes: usize) -> Result<f64> {
    fn run<E: Environment>(
        env: &E,
        config: &RunConfig,
        params: &PolicyParams,
        tasks: usize,
        episodes: usize,
    ) -> Result<f64> {
        let tasks = evaluation_tasks(env, tasks)?;
        let actor = params.actor(ActionMode::Stochastic);
        evaluate(env, &actor, config.policy.history, &tasks, episodes, &[u64::MAX])
    }
    match config.env.kind {
        EnvKind::StageWorld => run(
            &StageWorld::new(config.env.stageworld())?,
            config,
            params,
            tasks,
            episodes,
        ),
        EnvKind::MiniChain => run(
            &MiniChain::new(config.env.minichain())?,
            config,
            params,
            tasks,
            episodes,
        ),
    }
}

/// Writes `metrics.jsonl` and `checkpoint.bin` into the configured output directory.
pub fn write_run(config: &RunConfig, outcome: &TrainOutcome) -> Result<std::path::PathBuf> {
    let dir = std::path::PathBuf::from(&config.run.output_dir);
    std::fs::create_dir_all(&dir)?;
    let mut lines = String::new();
    for m in &outcome.metrics {
        lines.push_str(&serde_json::to_string(m)?);
        lines.push('\n');
    }
    std::fs::write(dir.join("metrics.jsonl"), lines)?;
    Checkpoint::new(config, &outcome.params).save(&dir.join("checkpoint.bin"))?;
    Ok(dir)
}

/// Outcome of annotating a trajectory file.
#[derive(Debug, Clone, Default)]
pub struct AnalyzeReport {
    /// One annotated JSON object per successfully processed input line.
    pub lines: Vec<String>,
    /// `(1-based line number, message)` for lines that could not be processed.
    pub errors: Vec<(usize, String)>,
}

fn analyze_in<E: Environment>(env: &E, config: &RunConfig, params: &PolicyParams, input: &str) -> AnalyzeReport {
    let perturbation = Perturbation::Random(config.causal.spec());
    let actor = params.actor(ActionMode::Stochastic);
    let mut report = AnalyzeReport::default();
    for (idx, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let result = (|| -> Result<String> {
            let mut record: serde_json::Map<String, serde_json::Value> = serde_json::from_str(line)?;
            let traj: Trajectory = serde_json::from_value(serde_json::Value::Object(record.clone()))?;
            if traj.is_empty() {
                return Err(PapoError::Contract("trajectory has no actions".into()));
            }
            for a in &traj.actions {
                a.validate(env.action_dim())?;
            }
            let task = env.task(traj.initial_seed, traj.goal_id)?;
            let selection = identify(&traj, config.planning.k_for(traj.len()), RewardBounds::default())?;
            let estimator = CausalEstimator {
                env,
                controller: &actor,
                history: config.policy.history,
                perturbation: &perturbation,
                key: vec![config.run.seed, idx as u64],
            };
            let profile = estimator.importance_profile(&task, &traj, &selection, config.causal.skip_zero_gate)?;
            record.insert("planning".into(), serde_json::to_value(&selection)?);
            record.insert("causal".into(), serde_json::to_value(&profile)?);
            Ok(serde_json::to_string(&record)?)
        })();
        match result {
            Ok(out) => report.lines.push(out),
            Err(e) => report.errors.push((idx + 1, e.to_string())),
        }
    }
    report
}

/// Adds `planning` and `causal` annotations to every trajectory record.
pub fn analyze(config: &RunConfig, params: &PolicyParams, input: &str) -> Result<AnalyzeReport> {
    Ok(match config.env.kind {
        EnvKind::StageWorld => analyze_in(&StageWorld::new(config.env.stageworld())?, config, params, input),
        EnvKind::MiniChain => analyze_in(&MiniChain::new(config.env.minichain())?, config, params, input),
    })
}

/// Policy parameters a fresh run of `config` would start from.
pub fn fresh_params(config: &RunConfig) -> Result<PolicyParams> {
    Ok(match config.env.kind {
        EnvKind::StageWorld => initial_params(&StageWorld::new(config.env.stageworld())?, config),
        EnvKind::MiniChain => initial_params(&MiniChain::new(config.env.minichain())?, config),
    })
}

/// One row of an ablation summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mode: Ablation,
    pub eta: f64,
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: f64,
}

/// Final success rate of one `(mode, eta, seed)` training run.
pub fn run_variant(base: &RunConfig, mode: Ablation, eta: f64, seed: u64) -> Result<f64> {
    let mut config = base.clone();
    config.run.ablation = mode;
    config.run.seed = seed;
    config.optimize.eta = eta;
    let outcome = train(&config)?;
    final_success_rate(&config, &outcome.params, config.run.final_eval_tasks, 1)
}

/// Trains every `(mode, eta)` combination under every seed.
pub fn ablate(base: &RunConfig, modes: &[Ablation], etas: &[f64], seeds: &[u64]) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for &mode in modes {
        for &eta in etas {
            let per_seed = seeds
                .iter()
                .map(|&s| run_variant(base, mode, eta, s).map(|r| (s, r)))
                .collect::<Result<Vec<_>>>()?;
            rows.push(summarize(mode, eta, per_seed));
        }
    }
    Ok(rows)
}

pub fn summarize(mode: Ablation, eta: f64, per_seed: Vec<(u64, f64)>) -> SummaryRow {
    let n = per_seed.len() as f64;
    let mean = per_seed.iter().map(|(_, r)| r).sum::<f64>() / n.max(1.0);
    let std = if per_seed.len() > 1 {
        (per_seed.iter().map(|(_, r)| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    SummaryRow {
        mode,
        eta,
        per_seed,
        mean,
        std,
    }
}

/// Tab-separated summary: mode, eta, mean, std, seeds, per-seed rates.
pub fn summary_tsv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("mode\teta\tmean_success\tstd_success\tseeds\tper_seed\n");
    for r in rows {
        let per: Vec<String> = r.per_seed.iter().map(|(s, v)| format!("{s}:{v}")).collect();
        out.push_str(&format!(
            "{}\t{}\t{:.4}\t{:.4}\t{}\t{}\n",
            r.mode.name(),
            r.eta,
            r.mean,
            r.std,
            r.per_seed.len(),
            per.join(",")
        ));
    }
    out
}
