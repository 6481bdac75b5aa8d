//! Credit assignment for reinforcement learning with verifiable rewards.
//!
//! A group of sampled token sequences is folded into a prefix tree whose
//! nodes carry the mean reward of every rollout passing through them. Those
//! prefix values give token-level TD corrections on top of the usual
//! group-normalized outcome signal; the crate also provides GRPO, HEPO and
//! GAE estimators, the clipped token-averaged surrogate, and a small
//! simulator for comparing the estimators.
//!
//! The math is generic over [`Scalar`] (`f32`, `f64`); the `*F64` / `*F32`
//! aliases below fix the scalar type.

pub mod advantage;
pub mod cli;
pub mod error;
pub mod loss;
pub mod scalar;
pub mod sim;
pub mod tree;

pub use advantage::{
    estimate, gae_advantages, gae_tree_advantages, group_stats, grpo_advantages, hepo_advantages,
    hepo_mask, td_corrections, tempo_advantages, AdvantageMatrix, EstimatorConfig, GaeConfig,
    GroupStats, Method,
};
pub use error::{Error, Result};
pub use loss::{clipped_surrogate, ClipConfig, SurrogateReport};
pub use scalar::Scalar;
pub use tree::{
    branch_token_stats, BranchPoint, BranchTokenStats, Group, NodeId, PrefixNode, PrefixTree,
    Rollout, TokenId,
};

pub type RolloutF64 = Rollout<f64>;
pub type GroupF64 = Group<f64>;
pub type PrefixTreeF64 = PrefixTree<f64>;
pub type GroupStatsF64 = GroupStats<f64>;
pub type AdvantageMatrixF64 = AdvantageMatrix<f64>;
pub type SurrogateReportF64 = SurrogateReport<f64>;

pub type RolloutF32 = Rollout<f32>;
pub type GroupF32 = Group<f32>;
pub type PrefixTreeF32 = PrefixTree<f32>;
pub type GroupStatsF32 = GroupStats<f32>;
pub type AdvantageMatrixF32 = AdvantageMatrix<f32>;
pub type SurrogateReportF32 = SurrogateReport<f32>;
