//! Planning-aware policy optimization for closed-loop sequential decision
//! policies.
//!
//! Rollouts from a small Gaussian policy are scanned for planning actions
//! (large, well-rewarded changes of intention). Intervention rollouts then
//! estimate how sufficient and how necessary each such action is for a good
//! outcome, and the combined importance is added to the group-relative
//! advantage before a clipped, KL-regularized policy update.

// Negated float comparisons in validation are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod causal;
pub mod env;
pub mod error;
pub mod harness;
pub mod optimize;
pub mod planning;
pub mod policy;
pub mod rng;

pub use causal::{CausalEstimator, CausalProfile, Perturbation, PerturbationSpec};
pub use env::{Action, Controller, Environment, MiniChain, StageWorld, TaskInput, Trajectory};
pub use error::{PapoError, Result};
pub use harness::{Ablation, MetricsRecord, RunConfig};
pub use optimize::{AdvantageTable, RolloutGroup};
pub use planning::PlanningSelection;
pub use policy::{PolicyParams, PolicySnapshot};
