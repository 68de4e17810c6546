//! TOML run configuration with `section.key=value` overrides.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::causal::PerturbationSpec;
use crate::env::{MiniChainConfig, RewardMode, StageWorldConfig};
use crate::error::{PapoError, Result};
use crate::optimize::{AdamConfig, ObjectiveConfig};
use crate::planning::PlanningConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    StageWorld,
    MiniChain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub kind: EnvKind,
    pub reward_mode: RewardMode,
    /// Defaults to 30 for StageWorld and 3 for MiniChain.
    pub max_horizon: Option<usize>,
    pub step_size: f64,
    pub grasp_radius: f64,
    pub goal_radius: f64,
    pub success_bonus: f64,
    pub chain_length: usize,
    pub chain_start: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        let sw = StageWorldConfig::default();
        Self {
            kind: EnvKind::StageWorld,
            reward_mode: RewardMode::Shaped,
            max_horizon: None,
            step_size: sw.step_size,
            grasp_radius: sw.grasp_radius,
            goal_radius: sw.goal_radius,
            success_bonus: sw.success_bonus,
            chain_length: 3,
            chain_start: 0,
        }
    }
}

impl EnvSection {
    pub fn stageworld(&self) -> StageWorldConfig {
        StageWorldConfig {
            step_size: self.step_size,
            grasp_radius: self.grasp_radius,
            goal_radius: self.goal_radius,
            max_horizon: self.max_horizon.unwrap_or(StageWorldConfig::default().max_horizon),
            reward_mode: self.reward_mode,
            success_bonus: self.success_bonus,
        }
    }

    pub fn minichain(&self) -> MiniChainConfig {
        MiniChainConfig {
            n: self.chain_length,
            horizon: self.max_horizon.unwrap_or(3),
            start: self.chain_start,
            reward_mode: self.reward_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub hidden: usize,
    /// Number of stacked observations `H`.
    pub history: usize,
    pub log_std_init: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            hidden: 64,
            history: 1,
            log_std_init: 0.5f64.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CausalSection {
    pub delta: f64,
    pub gripper_flip: bool,
    pub samples: usize,
    pub skip_zero_gate: bool,
}

impl Default for CausalSection {
    fn default() -> Self {
        let p = PerturbationSpec::default();
        Self {
            delta: p.delta,
            gripper_flip: p.gripper_flip,
            samples: p.samples,
            skip_zero_gate: true,
        }
    }
}

impl CausalSection {
    pub fn spec(&self) -> PerturbationSpec {
        PerturbationSpec {
            delta: self.delta,
            gripper_flip: self.gripper_flip,
            samples: self.samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSection {
    pub eta: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub group_size: usize,
    pub groups_per_round: usize,
    pub rounds: usize,
    /// Adam steps per round on the collected batch.
    pub epochs: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            eta: 0.15,
            epsilon: 0.2,
            beta: 0.01,
            group_size: 8,
            groups_per_round: 4,
            rounds: 200,
            epochs: 4,
            lr: adam.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
        }
    }
}

impl OptimizeSection {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            epsilon: self.epsilon,
            beta: self.beta,
        }
    }
}

/// Which importance signal enters the advantage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Harmonic combination of sufficiency and necessity.
    Papo,
    /// Trajectory-level advantage only.
    Grpo,
    /// Necessity alone.
    NoSuff,
    /// Sufficiency alone.
    NoNec,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Papo, Ablation::Grpo, Ablation::NoSuff, Ablation::NoNec];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Papo => "papo",
            Ablation::Grpo => "grpo",
            Ablation::NoSuff => "no_suff",
            Ablation::NoNec => "no_nec",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = PapoError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| PapoError::Config(format!("unknown ablation mode '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub output_dir: String,
    pub ablation: Ablation,
    /// Held-out tasks evaluated after every round.
    pub eval_tasks: usize,
    pub eval_episodes: usize,
    /// Held-out tasks for the final success rate.
    pub final_eval_tasks: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "runs/default".into(),
            ablation: Ablation::Papo,
            eval_tasks: 16,
            eval_episodes: 2,
            final_eval_tasks: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvSection,
    pub policy: PolicySection,
    pub planning: PlanningConfig,
    pub causal: CausalSection,
    pub optimize: OptimizeSection,
    pub run: RunSection,
}

fn parse_override(value: &str) -> toml::Value {
    // Accept any TOML literal; fall back to a bare string.
    format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

impl RunConfig {
    /// Parses TOML text, applies `section.key=value` overrides, validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| PapoError::Config(e.to_string()))?;
        for item in overrides {
            let (path, value) = item
                .split_once('=')
                .ok_or_else(|| PapoError::Config(format!("override '{item}' is not key=value")))?;
            let (section, key) = path
                .trim()
                .split_once('.')
                .ok_or_else(|| PapoError::Config(format!("override key '{path}' is not section.key")))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let section_table = entry
                .as_table_mut()
                .ok_or_else(|| PapoError::Config(format!("'{section}' is not a section")))?;
            section_table.insert(key.to_string(), parse_override(value.trim()));
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| PapoError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PapoError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(PapoError::Config(msg.to_string()));
        let e = &self.env;
        if e.max_horizon == Some(0) {
            return bad("env.max_horizon must be >= 1");
        }
        match e.kind {
            EnvKind::StageWorld => {
                crate::env::StageWorld::new(e.stageworld())?;
            }
            EnvKind::MiniChain => {
                crate::env::MiniChain::new(e.minichain())?;
            }
        }
        let p = &self.policy;
        if p.hidden == 0 || p.history == 0 {
            return bad("policy.hidden and policy.history must be >= 1");
        }
        if !(crate::policy::LOG_STD_MIN..=crate::policy::LOG_STD_MAX).contains(&p.log_std_init) {
            return bad("policy.log_std_init outside [-5, 2]");
        }
        self.planning.validate()?;
        self.causal.spec().validate()?;
        let o = &self.optimize;
        if !(0.0..=10.0).contains(&o.eta) {
            return bad("optimize.eta must lie in [0, 10]");
        }
        if !(o.epsilon > 0.0 && o.epsilon < 1.0) {
            return bad("optimize.epsilon must lie in (0, 1)");
        }
        if !(o.beta >= 0.0) {
            return bad("optimize.beta must be >= 0");
        }
        if o.group_size < 2 || o.groups_per_round == 0 {
            return bad("optimize.group_size must be >= 2 and groups_per_round >= 1");
        }
        if !(o.lr > 0.0)
            || !(0.0..1.0).contains(&o.adam_beta1)
            || !(0.0..1.0).contains(&o.adam_beta2)
            || !(o.adam_eps > 0.0)
        {
            return bad("invalid Adam parameters");
        }
        if self.run.eval_episodes == 0 {
            return bad("run.eval_episodes must be >= 1");
        }
        Ok(())
    }

    /// Hash of the sections a checkpoint depends on (environment and policy shape).
    pub fn checkpoint_hash(&self) -> u64 {
        #[derive(Serialize)]
        struct Keyed<'a> {
            env: &'a EnvSection,
            policy: &'a PolicySection,
        }
        let text = toml::to_string(&Keyed {
            env: &self.env,
            policy: &self.policy,
        })
        .expect("serializable");
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.optimize.eta, 0.15);
        assert_eq!(c.optimize.group_size, 8);
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::from_toml_str(
            "[optimize]\neta = 0.1\n",
            &[
                "optimize.eta=0.3".into(),
                "run.ablation=no_nec".into(),
                "env.kind=minichain".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.optimize.eta, 0.3);
        assert_eq!(c.run.ablation, Ablation::NoNec);
        assert_eq!(c.env.kind, EnvKind::MiniChain);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("[optimize]\netta = 0.1\n", &[]).is_err());
        assert!(RunConfig::from_toml_str("[bogus]\nx = 1\n", &[]).is_err());
        assert!(RunConfig::from_toml_str("", &["optimize.nope=1".into()]).is_err());
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(RunConfig::from_toml_str("", &["optimize.group_size=1".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["causal.delta=2.0".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["policy.log_std_init=3.0".into()]).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.planning.k = Some(3);
        let back = RunConfig::from_toml_str(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn checkpoint_hash_ignores_run_section() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.run.seed = 99;
        b.optimize.eta = 0.0;
        assert_eq!(a.checkpoint_hash(), b.checkpoint_hash());
        b.policy.hidden = 32;
        assert_ne!(a.checkpoint_hash(), b.checkpoint_hash());
    }
}
