//! Inner-loop RL algorithms: PPO, DQN/DDQN, discrete and continuous SAC,
//! DDPG, and TD3, plus hyperparameter sampling and neuroevolution of policy
//! networks.
//!
//! Each training run is single-threaded and self-contained; the meta layer
//! runs many trainings concurrently. A NaN loss, NaN parameter, or NaN
//! reward aborts the run with a NaN-fitness signal ([`Error::Numerical`]).

mod buffer;
mod ddpg;
mod dqn;
mod gae;
mod neuro;
mod optim;
mod ppo;
pub(crate) mod sac;

pub use gae::gae;
pub use neuro::neuroevolve_policy;
pub use optim::{clip_global_norm, polyak_update, Adam};

pub(crate) use buffer::Replay;

use crate::envs::{Action, ActionSpace, Env, EnvId};
use crate::nn::{Activation, NetworkSpec, ParamVector};
use crate::{Error, Result, Rng};

/// Inner-loop algorithm identifier. DQN carries its double-DQN flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgoId {
    Ppo,
    Dqn,
    Sac,
    Ddpg,
    Td3,
}

impl AlgoId {
    /// Algorithms admissible for an environment's action space: discrete envs
    /// train PPO, SAC, and the DQN family; continuous envs train PPO, SAC,
    /// DDPG, and TD3.
    pub fn admissible(env_id: EnvId) -> &'static [AlgoId] {
        if env_id.is_discrete() {
            &[AlgoId::Ppo, AlgoId::Sac, AlgoId::Dqn]
        } else {
            &[AlgoId::Ppo, AlgoId::Sac, AlgoId::Ddpg, AlgoId::Td3]
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AlgoId::Ppo => "ppo",
            AlgoId::Dqn => "dqn",
            AlgoId::Sac => "sac",
            AlgoId::Ddpg => "ddpg",
            AlgoId::Td3 => "td3",
        }
    }
}

impl std::str::FromStr for AlgoId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ppo" => Ok(AlgoId::Ppo),
            "dqn" | "ddqn" => Ok(AlgoId::Dqn),
            "sac" => Ok(AlgoId::Sac),
            "ddpg" => Ok(AlgoId::Ddpg),
            "td3" => Ok(AlgoId::Td3),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Full hyperparameter assignment. Set-valued rows come from the sampling
/// tables; fixed-structure fields (architecture, step counts, buffer sizes)
/// are never sampled.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Hp {
    pub learning_rate: f32,
    pub discount: f32,
    pub gae_lambda: f32,
    pub clip_eps: f32,
    pub entropy_coef: f32,
    pub value_coef: f32,
    pub polyak_tau: f32,
    pub expl_noise: f32,
    pub target_noise: f32,
    pub target_noise_clip: f32,
    pub eps_start: f32,
    pub eps_end: f32,
    pub eps_decay_fraction: f32,
    pub target_entropy_ratio: f32,
    pub double_dqn: bool,
    pub num_envs: usize,
    pub num_steps: usize,
    pub num_epochs: usize,
    pub num_minibatches: usize,
    pub buffer_size: usize,
    pub prefill: usize,
    pub batch_size: usize,
    pub grad_steps: usize,
    pub target_update_freq: usize,
    pub max_grad_norm: Option<f32>,
    pub policy_delay: usize,
}

impl Default for Hp {
    fn default() -> Self {
        Hp {
            learning_rate: 0.005,
            discount: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            polyak_tau: 0.95,
            expl_noise: 0.2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.5,
            target_entropy_ratio: 0.7,
            double_dqn: true,
            num_envs: 1,
            num_steps: 100,
            num_epochs: 10,
            num_minibatches: 10,
            buffer_size: 2000,
            prefill: 1000,
            batch_size: 100,
            grad_steps: 1,
            target_update_freq: 50,
            max_grad_norm: Some(10.0),
            policy_delay: 2,
        }
    }
}

/// One sampled inner-loop configuration: the algorithm plus a full
/// hyperparameter assignment, the step budget, and the agent network shape.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InnerTask {
    pub algo: AlgoId,
    pub hp: Hp,
    pub total_steps: usize,
    /// Policy-head network spec: obs -> action head. Critics reuse the hidden
    /// sizes and activation.
    pub net: NetworkSpec,
}

pub const DEFAULT_TOTAL_STEPS: usize = 10_000;

const LR_SET: [f32; 5] = [0.01, 0.005, 0.001, 0.0005, 0.0001];
const DISCOUNT_SET: [f32; 5] = [1.0, 0.99, 0.95, 0.9, 0.8];
const LAMBDA_SET: [f32; 5] = [1.0, 0.95, 0.9, 0.8, 0.5];
const CLIP_SET: [f32; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
const ENTROPY_SET: [f32; 5] = [0.0, 0.01, 0.05, 0.1, 0.5];
const VALUE_COEF_SET: [f32; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];
const TAU_SET: [f32; 5] = [0.99, 0.95, 0.9, 0.7, 0.8];
const TARGET_ENTROPY_RATIO_SET: [f32; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const EPS_END_SET: [f32; 4] = [0.01, 0.05, 0.1, 0.2];
const NOISE_SET: [f32; 6] = [0.1, 0.2, 0.3, 0.5, 0.7, 0.9];
const TARGET_NOISE_CLIP_SET: [f32; 6] = [0.1, 0.4, 0.5, 0.7, 1.0, 1.3];

/// Agent activation: tanh everywhere except Pendulum, which uses ReLU.
pub fn agent_activation(env_id: EnvId) -> Activation {
    if env_id == EnvId::PendulumV1 {
        Activation::Relu
    } else {
        Activation::Tanh
    }
}

/// Policy-head output width per algorithm.
fn policy_head_dim(env_id: EnvId, algo: AlgoId) -> usize {
    match (&env_id.action_space(), algo) {
        (ActionSpace::Discrete(n), _) => *n,
        // continuous SAC outputs per-dim mean and log-std
        (ActionSpace::Box { low, .. }, AlgoId::Sac) => 2 * low.len(),
        (ActionSpace::Box { low, .. }, _) => low.len(),
    }
}

/// Builds the task for a specific algorithm. With `fixed`, every set-valued
/// row takes its fixed-configuration value; otherwise each row is drawn
/// uniformly from its table set.
pub fn task_for(env_id: EnvId, algo: AlgoId, rng: &mut Rng, fixed: bool) -> InnerTask {
    let discrete = env_id.is_discrete();
    let mut hp = Hp::default();

    let pick = |set: &[f32], fixed_value: f32, rng: &mut Rng| -> f32 {
        if fixed {
            fixed_value
        } else {
            *rng.choose(set)
        }
    };

    // PPO's table excludes lr 0.01 on continuous environments.
    hp.learning_rate = if algo == AlgoId::Ppo && !discrete {
        pick(&LR_SET[1..], 0.005, rng)
    } else {
        pick(&LR_SET, 0.005, rng)
    };
    hp.discount = pick(&DISCOUNT_SET, 0.99, rng);

    match algo {
        AlgoId::Ppo => {
            hp.gae_lambda = pick(&LAMBDA_SET, 0.95, rng);
            hp.clip_eps = pick(&CLIP_SET, 0.2, rng);
            hp.entropy_coef = pick(&ENTROPY_SET, 0.01, rng);
            hp.value_coef = pick(&VALUE_COEF_SET, 0.5, rng);
            hp.num_envs = 5;
            hp.num_steps = 100;
            hp.num_epochs = 10;
            hp.num_minibatches = 10;
            hp.max_grad_norm = Some(10.0);
        }
        AlgoId::Sac => {
            hp.polyak_tau = pick(&TAU_SET, 0.95, rng);
            if discrete {
                hp.target_entropy_ratio = pick(&TARGET_ENTROPY_RATIO_SET, 0.7, rng);
            }
            hp.num_envs = 5;
            hp.buffer_size = 2000;
            hp.prefill = 1000;
            hp.batch_size = 256;
            hp.grad_steps = 2;
            hp.max_grad_norm = None;
        }
        AlgoId::Dqn => {
            // The table has no fixed-configuration marker for epsilon end;
            // 0.05 is the fixed choice here.
            hp.eps_end = pick(&EPS_END_SET, 0.05, rng);
            hp.double_dqn = if fixed { true } else { rng.index(2) == 0 };
            hp.num_envs = 10;
            hp.buffer_size = 2000;
            hp.prefill = 1000;
            hp.batch_size = 100;
            hp.grad_steps = 1;
            hp.target_update_freq = 50;
            hp.max_grad_norm = Some(10.0);
        }
        AlgoId::Ddpg | AlgoId::Td3 => {
            hp.polyak_tau = pick(&TAU_SET, 0.95, rng);
            hp.expl_noise = pick(&NOISE_SET, 0.2, rng);
            if algo == AlgoId::Td3 {
                hp.target_noise = pick(&NOISE_SET, 0.2, rng);
                hp.target_noise_clip = pick(&TARGET_NOISE_CLIP_SET, 0.5, rng);
            }
            hp.num_envs = 1;
            hp.buffer_size = 2000;
            hp.prefill = 1000;
            hp.batch_size = 100;
            hp.grad_steps = 1;
            hp.max_grad_norm = Some(10.0);
        }
    }

    let net = NetworkSpec::new(
        env_id.obs_dim(),
        &[64, 64],
        policy_head_dim(env_id, algo),
        agent_activation(env_id),
    );
    InnerTask { algo, hp, total_steps: DEFAULT_TOTAL_STEPS, net }
}

/// Samples an inner-loop task: a uniformly drawn admissible algorithm plus a
/// hyperparameter assignment (fixed-configuration values when `fixed`).
pub fn sample_task(env_id: EnvId, rng: &mut Rng, fixed: bool) -> InnerTask {
    let algo = *rng.choose(AlgoId::admissible(env_id));
    task_for(env_id, algo, rng, fixed)
}

/// How a trained policy turns an observation into its deterministic
/// evaluation action.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
enum PolicyKind {
    /// argmax over head outputs (DQN Q-values, PPO logits, SAC-discrete logits)
    Argmax,
    /// head outputs the Gaussian mean directly; clamp into the box (PPO)
    MeanClamp,
    /// tanh(head) scaled into the box (DDPG, TD3, neuroevolved nets)
    TanhSquash,
    /// first half of the head is the pre-squash mean (continuous SAC)
    TanhSquashHalf,
}

/// A frozen, deterministic policy: a network spec, flat parameters, and the
/// action rule. Cheap to clone and safe to share across rollout workers.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainedPolicy {
    kind: PolicyKind,
    pub spec: NetworkSpec,
    pub params: ParamVector,
    space_low: Vec<f32>,
    space_high: Vec<f32>,
    discrete: bool,
}

impl TrainedPolicy {
    fn new(kind: PolicyKind, spec: NetworkSpec, params: ParamVector, space: &ActionSpace) -> Self {
        let (low, high, discrete) = match space {
            ActionSpace::Discrete(_) => (Vec::new(), Vec::new(), true),
            ActionSpace::Box { low, high } => (low.clone(), high.clone(), false),
        };
        TrainedPolicy { kind, spec, params, space_low: low, space_high: high, discrete }
    }

    pub(crate) fn argmax(spec: NetworkSpec, params: ParamVector, space: &ActionSpace) -> Self {
        Self::new(PolicyKind::Argmax, spec, params, space)
    }

    pub(crate) fn mean_clamp(spec: NetworkSpec, params: ParamVector, space: &ActionSpace) -> Self {
        Self::new(PolicyKind::MeanClamp, spec, params, space)
    }

    pub(crate) fn tanh_squash(spec: NetworkSpec, params: ParamVector, space: &ActionSpace) -> Self {
        Self::new(PolicyKind::TanhSquash, spec, params, space)
    }

    pub(crate) fn tanh_squash_half(
        spec: NetworkSpec,
        params: ParamVector,
        space: &ActionSpace,
    ) -> Self {
        Self::new(PolicyKind::TanhSquashHalf, spec, params, space)
    }

    /// Deterministic evaluation action.
    pub fn act(&self, obs: &[f32]) -> Action {
        let out = crate::nn::forward(&self.spec, &self.params, obs)
            .expect("policy dims fixed at construction");
        if self.discrete {
            let mut best = 0;
            for i in 1..out.len() {
                if out[i] > out[best] {
                    best = i;
                }
            }
            return Action::Discrete(best);
        }
        let k = self.space_low.len();
        let vals: Vec<f32> = match self.kind {
            PolicyKind::MeanClamp => (0..k)
                .map(|i| out[i].clamp(self.space_low[i], self.space_high[i]))
                .collect(),
            PolicyKind::TanhSquash => (0..k)
                .map(|i| {
                    let scale = 0.5 * (self.space_high[i] - self.space_low[i]);
                    let center = 0.5 * (self.space_high[i] + self.space_low[i]);
                    out[i].tanh() * scale + center
                })
                .collect(),
            PolicyKind::TanhSquashHalf => (0..k)
                .map(|i| {
                    let scale = 0.5 * (self.space_high[i] - self.space_low[i]);
                    let center = 0.5 * (self.space_high[i] + self.space_low[i]);
                    out[i].tanh() * scale + center
                })
                .collect(),
            PolicyKind::Argmax => unreachable!("argmax policies are discrete"),
        };
        Action::Continuous(vals)
    }

    /// Adapter for [`crate::envs::rollout`].
    pub fn as_fn(&self) -> impl FnMut(&[f32]) -> Action + '_ {
        move |obs| self.act(obs)
    }
}

/// Training curve and step accounting.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub steps_consumed: usize,
    /// `total_steps - steps_consumed` when rollout granularity rounds down.
    pub step_deficit: usize,
    /// (global step, episodic return) for every completed training episode.
    pub episodes: Vec<(usize, f32)>,
    /// (global step, loss) sampled at update cadence.
    pub losses: Vec<(usize, f32)>,
}

pub struct TrainRun {
    pub policy: TrainedPolicy,
    pub log: TrainLog,
}

/// Periodic mid-training evaluation callback: `(cadence, f(step, policy))`.
pub type EvalHook<'a> = (usize, &'a mut dyn FnMut(usize, &TrainedPolicy));

/// Trains one agent for exactly `task.total_steps` environment steps (PPO
/// rounds down to whole rollouts and reports the deficit).
pub fn train(task: &InnerTask, env: &dyn Env, rng: &mut Rng) -> Result<TrainRun> {
    train_with_hook(task, env, rng, None)
}

pub fn train_with_hook(
    task: &InnerTask,
    env: &dyn Env,
    rng: &mut Rng,
    hook: Option<EvalHook<'_>>,
) -> Result<TrainRun> {
    let discrete = matches!(env.action_space(), ActionSpace::Discrete(_));
    match (task.algo, discrete) {
        (AlgoId::Ppo, _) => ppo::train(task, env, rng, hook),
        (AlgoId::Dqn, true) => dqn::train(task, env, rng, hook),
        (AlgoId::Sac, true) => sac::train_discrete(task, env, rng, hook),
        (AlgoId::Sac, false) => sac::train_continuous(task, env, rng, hook),
        (AlgoId::Ddpg, false) | (AlgoId::Td3, false) => ddpg::train(task, env, rng, hook),
        (algo, _) => Err(Error::Config(format!(
            "{} does not support this action space",
            algo.as_str()
        ))),
    }
}

/// Batched no-grad forward pass: `x` is `[batch, input_dim]` row-major.
pub(crate) fn forward_batch(
    spec: &NetworkSpec,
    params: &[f32],
    x: &[f32],
    batch: usize,
) -> Vec<f32> {
    debug_assert_eq!(x.len(), batch * spec.input_dim);
    let dims = spec.layer_dims();
    let n_layers = dims.len();
    let mut cur = x.to_vec();
    let mut off = 0;
    for (l, (fan_in, fan_out)) in dims.into_iter().enumerate() {
        let w = &params[off..off + fan_in * fan_out];
        off += fan_in * fan_out;
        let b = &params[off..off + fan_out];
        off += fan_out;
        // saxpy over transposed weights; same kernel shape as the tape affine
        let mut wt = vec![0.0f32; fan_in * fan_out];
        for o in 0..fan_out {
            for i in 0..fan_in {
                wt[i * fan_out + o] = w[o * fan_in + i];
            }
        }
        let mut next = vec![0.0f32; batch * fan_out];
        for r in 0..batch {
            let xrow = &cur[r * fan_in..(r + 1) * fan_in];
            let yrow = &mut next[r * fan_out..(r + 1) * fan_out];
            yrow.copy_from_slice(b);
            for i in 0..fan_in {
                let xv = xrow[i];
                let wrow = &wt[i * fan_out..(i + 1) * fan_out];
                for o in 0..fan_out {
                    yrow[o] += xv * wrow[o];
                }
            }
            if l + 1 < n_layers {
                for v in yrow.iter_mut() {
                    *v = match spec.activation {
                        crate::nn::Activation::Tanh => crate::tape::TapeFloat::act_tanh(*v),
                        other => other.apply(*v),
                    };
                }
            }
        }
        cur = next;
    }
    cur
}

/// Round-robin bank of environment states used by the multi-env stepping
/// loops. Resets are drawn from a dedicated stream; terminated or truncated
/// episodes restart transparently and report their return.
pub(crate) struct EnvBank<'e> {
    env: &'e dyn Env,
    states: Vec<crate::envs::EnvState>,
    returns: Vec<f32>,
    reset_rng: Rng,
}

impl<'e> EnvBank<'e> {
    pub fn new(env: &'e dyn Env, n: usize, reset_rng: Rng) -> Self {
        let mut reset_rng = reset_rng;
        let states = (0..n).map(|_| env.reset(&mut reset_rng)).collect();
        EnvBank { env, states, returns: vec![0.0; n], reset_rng }
    }

    pub fn obs(&self, i: usize) -> &[f32] {
        &self.states[i].obs
    }

    /// Steps env `i`; returns the transition and, if the episode ended, the
    /// completed return. `Err` only on contract violations; NaN rewards pass
    /// through for the caller's NaN-abort handling.
    pub fn step(
        &mut self,
        i: usize,
        action: &Action,
    ) -> Result<(crate::envs::EnvState, f32, Option<f32>)> {
        let (next, reward) = self.env.step(&self.states[i], action)?;
        self.returns[i] += reward;
        let mut finished = None;
        if next.done || next.truncated {
            finished = Some(self.returns[i]);
            self.returns[i] = 0.0;
            let fresh = self.env.reset(&mut self.reset_rng);
            let old = std::mem::replace(&mut self.states[i], fresh);
            drop(old);
            return Ok((next, reward, finished));
        }
        self.states[i] = next.clone();
        Ok((next, reward, finished))
    }
}
