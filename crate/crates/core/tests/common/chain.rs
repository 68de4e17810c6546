//! MiniChain rules re-derived for brute-force enumeration, independent of
//! the library's replay code.

use papo_core::env::{rollout_open_loop, Action, MiniChain, MiniChainConfig, RewardMode, TaskInput, Trajectory};

pub const N: i64 = 3;
pub const T: usize = 3;
pub const MOVES: [i64; 3] = [-1, 0, 1];

/// Position after applying `moves` from 0 on the chain `0..=N`.
pub fn walk(moves: &[i64]) -> i64 {
    moves.iter().fold(0, |p, m| (p + m).clamp(0, N))
}

pub fn reward(final_pos: i64, goal: i64, mode: RewardMode) -> f64 {
    let success = final_pos == goal;
    match mode {
        RewardMode::Sparse => {
            if success {
                1.0
            } else {
                0.0
            }
        }
        RewardMode::Shaped => {
            if success {
                1.0
            } else {
                0.5 * (1.0 - (final_pos - goal).abs() as f64 / N as f64)
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Rule {
    Greedy,
    Stay,
    Forward,
}

impl Rule {
    pub fn next(self, pos: i64, goal: i64) -> i64 {
        match self {
            Rule::Greedy => (goal - pos).signum(),
            Rule::Stay => 0,
            Rule::Forward => 1,
        }
    }

    /// The same rule read off the policy window `[pos/N, step/T, one-hot goal]`.
    pub fn controller(self) -> impl Fn(&[f64]) -> Action + Sync {
        move |w: &[f64]| {
            let pos = (w[0] * N as f64).round() as i64;
            let goal_id = w[2..].iter().position(|v| *v == 1.0).unwrap() as i64;
            Action::new(vec![self.next(pos, N - goal_id) as f64]).unwrap()
        }
    }
}

/// Completes `prefix` to length `T` with `rule`.
pub fn continue_with(prefix: &[i64], goal: i64, rule: Rule) -> Vec<i64> {
    let mut seq = prefix.to_vec();
    while seq.len() < T {
        let p = walk(&seq);
        seq.push(rule.next(p, goal));
    }
    seq
}

pub fn alternatives(m: i64) -> Vec<i64> {
    MOVES.iter().copied().filter(|x| *x != m).collect()
}

pub fn oracle_sufficiency(seq: &[i64], t: usize, goal: i64, rule: Rule, mode: RewardMode) -> f64 {
    let kept = reward(walk(&continue_with(&seq[..=t], goal, rule)), goal, mode);
    let alts = alternatives(seq[t]);
    let mut sum = 0.0;
    for a in &alts {
        let mut prefix = seq[..t].to_vec();
        prefix.push(*a);
        sum += reward(walk(&continue_with(&prefix, goal, rule)), goal, mode);
    }
    (kept - sum / alts.len() as f64).max(0.0)
}

pub fn oracle_necessity(seq: &[i64], t: usize, goal: i64, mode: RewardMode) -> f64 {
    let kept = reward(walk(seq), goal, mode);
    let alts = alternatives(seq[t]);
    let mut sum = 0.0;
    for a in &alts {
        let mut s = seq.to_vec();
        s[t] = *a;
        sum += reward(walk(&s), goal, mode);
    }
    (kept - sum / alts.len() as f64).max(0.0)
}

pub fn action(m: i64) -> Action {
    Action::new(vec![m as f64]).unwrap()
}

pub fn all_sequences() -> Vec<Vec<i64>> {
    let mut out = vec![];
    for a in MOVES {
        for b in MOVES {
            for c in MOVES {
                out.push(vec![a, b, c]);
            }
        }
    }
    out
}

pub fn env(mode: RewardMode) -> MiniChain {
    MiniChain::new(MiniChainConfig {
        n: N as usize,
        horizon: T,
        start: 0,
        reward_mode: mode,
    })
    .unwrap()
}

pub fn recorded(env: &MiniChain, task: &TaskInput, seq: &[i64]) -> Trajectory {
    let actions: Vec<Action> = seq.iter().map(|m| action(*m)).collect();
    rollout_open_loop(env, task, &actions).unwrap().0
}

/// `(p_suff, p_nec)` by direct enumeration over the replacement set.
pub fn oracle_pns(seq: &[i64], t: usize, goal: i64, rule: Rule, set: &[i64]) -> (Option<f64>, Option<f64>, f64) {
    let success = |s: &[i64]| walk(s) == goal;
    let failing: Vec<i64> = set
        .iter()
        .copied()
        .filter(|a| {
            let mut s = seq.to_vec();
            s[t] = *a;
            !success(&s)
        })
        .collect();
    let do_kept = success(&continue_with(&seq[..=t], goal, rule));
    let p_suff = if failing.is_empty() {
        None
    } else {
        let hits = failing.iter().filter(|_| do_kept).count();
        Some(hits as f64 / failing.len() as f64)
    };
    let weight_fail = failing.len() as f64 / set.len() as f64;
    let p_nec = success(seq).then_some(weight_fail);
    (p_suff, p_nec, weight_fail)
}
