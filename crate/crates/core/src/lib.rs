//! Meta-learning of synthetic contextual bandits (SCBs): single-step neural
//! environments optimized so that RL agents trained inside them transfer to
//! fixed classic-control evaluation environments.
//!
//! The crate is organized around the outer/inner loop split:
//!
//! - [`rng`], [`nn`], [`tape`]: splittable RNG, fixed-topology MLPs, and a
//!   small reverse-mode autodiff engine shared by everything else.
//! - [`envs`]: native classic-control environments and tabular MDPs.
//! - [`scb`]: the synthetic environment family (CB / T / TI parameterizations).
//! - [`agents`]: inner-loop RL algorithms (PPO, DQN/DDQN, SAC, DDPG, TD3),
//!   hyperparameter sampling, and neuroevolution of policies.
//! - [`snes`]: separable natural evolution strategy, the outer-loop optimizer.
//! - [`meta`]: the bi-level meta-training loop with evaluation-length curricula.
//! - [`analysis`]: optimal-action maps, reward-variance feature importance,
//!   CB-optimal policies, IQM/bootstrap aggregation.
//! - [`oracle`]: exact MDP-to-CB constructions on tabular MDPs.
//! - [`baselines`]: expert training and component-replacement baselines.
//! - [`checkpoint`]: the on-disk container shared by SCBs and expert bundles.

pub mod agents;
pub mod analysis;
pub mod baselines;
pub mod checkpoint;
pub mod envs;
pub mod meta;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod scb;
pub mod snes;
pub mod tape;

pub use nn::{Activation, NetworkSpec, ParamVector};
pub use rng::Rng;

/// Errors shared across the crate's public surface.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unsupported operation: {0}")]
    UnsupportedOp(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
