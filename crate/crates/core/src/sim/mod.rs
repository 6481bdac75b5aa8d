//! Desk-scale testbed: synthetic branching token environments with
//! verifiable terminal rewards, a tabular softmax policy, and a trainer that
//! drives it with any of the advantage estimators.

mod env;
mod policy;
mod train;

pub use env::{BranchEnv, Decision, RewardRule};
pub use policy::{entropy, softmax, ContextKey, ContextMode, Gradient, TabularPolicy};
pub use train::{
    median, median_final_success, median_updates_to_threshold, sample_group, sweep, train,
    train_policy, train_seeds, ExperimentReport, SweepAxis, TrainConfig,
};
