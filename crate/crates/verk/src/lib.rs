//! A desk-scale laboratory for multi-attempt reinforcement learning under
//! verifier feedback.
//!
//! The library implements the Verification@K rollout protocol on a
//! synthetic hub Markov chain (with an optional trap variant) and a
//! perfect-maze task, three attempt-aware policy-gradient estimators
//! (trajectory-level, naive attempt-level, calibrated attempt-level) in
//! both leave-one-out and group-normalized forms, an exact-enumeration
//! oracle that verifies their bias and variance properties numerically,
//! and an on-policy trainer for a tabular softmax policy.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run --release --example oracle_checks
//! cargo run --release --example train_chain
//! cargo run --release --example compare_estimators
//! ```
//!
//! or the `verk` binary, which exposes the same capabilities as
//! subcommands (`train`, `oracle-check`, `advantages`, `maze-gen`,
//! `report`).

pub mod battery;
pub mod chain;
pub mod cli;
pub mod config;
pub mod estimators;
pub mod maze;
pub mod oracle;
pub mod policy;
pub mod rollout;
pub mod trainer;

pub use chain::{build_chain, ChainInstance, ChainSpec, TrapAssignment};
pub use estimators::{EstimatorKind, NormKind, NormMode};
pub use policy::{ContextScheme, PolicyParams};
pub use rollout::{Group, Trajectory};
pub use trainer::{train, TrainConfig};
