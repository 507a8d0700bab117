//! Evaluation environments: native classic-control implementations and
//! finite tabular MDPs.
//!
//! Environment stepping is pure state-in/state-out; many rollouts can proceed
//! concurrently with per-rollout [`Rng`] streams.

mod classic;
mod tabular;

pub use classic::ClassicEnv;
pub use tabular::{
    greedy_policy, occupancy, policy_evaluation, random_mdp, solve_linear, value_iteration,
    TabularMdp, TabularPolicy,
};

use crate::{Error, Result, Rng};

/// The five classic-control evaluation environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum EnvId {
    #[serde(rename = "CartPole-v1")]
    CartPoleV1,
    #[serde(rename = "MountainCar-v0")]
    MountainCarV0,
    #[serde(rename = "MountainCarContinuous-v0", alias = "ContinuousMountainCar-v0")]
    MountainCarContinuousV0,
    #[serde(rename = "Pendulum-v1")]
    PendulumV1,
    #[serde(rename = "Acrobot-v1")]
    AcrobotV1,
}

impl EnvId {
    pub const ALL: [EnvId; 5] = [
        EnvId::CartPoleV1,
        EnvId::MountainCarV0,
        EnvId::MountainCarContinuousV0,
        EnvId::PendulumV1,
        EnvId::AcrobotV1,
    ];

    pub fn obs_dim(self) -> usize {
        match self {
            EnvId::CartPoleV1 => 4,
            EnvId::MountainCarV0 | EnvId::MountainCarContinuousV0 => 2,
            EnvId::PendulumV1 => 3,
            EnvId::AcrobotV1 => 6,
        }
    }

    pub fn action_space(self) -> ActionSpace {
        match self {
            EnvId::CartPoleV1 => ActionSpace::Discrete(2),
            EnvId::MountainCarV0 | EnvId::AcrobotV1 => ActionSpace::Discrete(3),
            EnvId::MountainCarContinuousV0 => ActionSpace::Box { low: vec![-1.0], high: vec![1.0] },
            EnvId::PendulumV1 => ActionSpace::Box { low: vec![-2.0], high: vec![2.0] },
        }
    }

    pub fn default_horizon(self) -> usize {
        match self {
            EnvId::CartPoleV1 | EnvId::AcrobotV1 => 500,
            EnvId::MountainCarV0 | EnvId::PendulumV1 => 200,
            EnvId::MountainCarContinuousV0 => 999,
        }
    }

    pub fn is_discrete(self) -> bool {
        matches!(self.action_space(), ActionSpace::Discrete(_))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::CartPoleV1 => "CartPole-v1",
            EnvId::MountainCarV0 => "MountainCar-v0",
            EnvId::MountainCarContinuousV0 => "MountainCarContinuous-v0",
            EnvId::PendulumV1 => "Pendulum-v1",
            EnvId::AcrobotV1 => "Acrobot-v1",
        }
    }
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CartPole-v1" => Ok(EnvId::CartPoleV1),
            "MountainCar-v0" => Ok(EnvId::MountainCarV0),
            // "ContinuousMountainCar-v0" is accepted as an alias for the
            // standard gym name.
            "MountainCarContinuous-v0" | "ContinuousMountainCar-v0" => {
                Ok(EnvId::MountainCarContinuousV0)
            }
            "Pendulum-v1" => Ok(EnvId::PendulumV1),
            "Acrobot-v1" => Ok(EnvId::AcrobotV1),
            other => Err(Error::Config(format!("unknown environment id '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Box { low: Vec<f32>, high: Vec<f32> },
}

impl ActionSpace {
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Box { low, .. } => low.len(),
        }
    }

    /// Width of the action's network encoding: one-hot for discrete,
    /// passthrough for boxes.
    pub fn encoding_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Box { low, .. } => low.len(),
        }
    }

    pub fn contains(&self, action: &Action) -> bool {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) => a < n,
            (ActionSpace::Box { low, high }, Action::Continuous(v)) => {
                v.len() == low.len()
                    && v.iter()
                        .zip(low.iter().zip(high))
                        .all(|(x, (l, h))| x.is_finite() && *x >= *l && *x <= *h)
            }
            _ => false,
        }
    }

    /// Clamps a continuous action into the box; discrete actions pass through.
    pub fn clamp(&self, action: Action) -> Action {
        match (self, action) {
            (ActionSpace::Box { low, high }, Action::Continuous(v)) => Action::Continuous(
                v.into_iter()
                    .zip(low.iter().zip(high))
                    .map(|(x, (l, h))| x.clamp(*l, *h))
                    .collect(),
            ),
            (_, a) => a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f32>),
}

/// Environment state as seen by agents, plus the internal physics state when
/// the observation is a derived quantity (Pendulum, Acrobot).
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub obs: Vec<f32>,
    pub t: usize,
    pub done: bool,
    pub truncated: bool,
    pub internal: Vec<f32>,
}

/// Single-step environment interface shared by classic control and the
/// synthetic family. Stepping is deterministic; randomness enters only at
/// reset.
pub trait Env: Sync {
    fn obs_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    /// Truncation horizon: `t` never exceeds this.
    fn horizon(&self) -> usize;
    fn reset(&self, rng: &mut Rng) -> EnvState;
    fn step(&self, state: &EnvState, action: &Action) -> Result<(EnvState, f32)>;
}

/// Runs one episode and returns the undiscounted return. The episode ends at
/// termination, truncation, or after `max_steps` steps, whichever comes
/// first; `max_steps` implements the evaluation-length curriculum cap.
pub fn rollout(
    env: &dyn Env,
    policy: &mut dyn FnMut(&[f32]) -> Action,
    max_steps: usize,
    rng: &mut Rng,
) -> f32 {
    debug_assert!(max_steps >= 1);
    let mut state = env.reset(rng);
    let mut total = 0.0f32;
    for _ in 0..max_steps {
        let action = policy(&state.obs);
        let (next, reward) = env
            .step(&state, &action)
            .expect("rollout stepped with an invalid action or finished state");
        total += reward;
        state = next;
        if state.done || state.truncated {
            break;
        }
    }
    total
}
