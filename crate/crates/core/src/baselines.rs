//! Expert agents and the component-replacement baselines: swapping the
//! synthetic reward function for online behavioral cloning, expert-action
//! rewards, or an expert Q-function, and the synthetic initial-state
//! distribution for expert-visited states.

use serde::{Deserialize, Serialize};

use crate::agents::{self, AlgoId, TrainedPolicy};
use crate::analysis;
use crate::checkpoint;
use crate::envs::{Action, ActionSpace, ClassicEnv, Env, EnvId, EnvState};
use crate::nn::{self, NetworkSpec, ParamVector};
use crate::scb::Scb;
use crate::tape::Tape;
use crate::{Error, Result, Rng};

/// Return bands for accepting an expert, per environment: the full-scale
/// interval from the reference table and the relaxed desk-scale floor used
/// when the full training budget is infeasible.
pub fn expert_bands(env_id: EnvId) -> (f64, f64, f64) {
    // (full_low, full_high, desk_floor)
    match env_id {
        EnvId::PendulumV1 => (-151.5, -127.5, -200.0),
        EnvId::AcrobotV1 => (-78.9, -74.7, -100.0),
        EnvId::CartPoleV1 => (500.0, 500.0, 475.0),
        EnvId::MountainCarContinuousV0 => (94.8, 95.0, 85.0),
        EnvId::MountainCarV0 => (-119.2, -115.3, -199.0),
    }
}

/// A trained expert: its deterministic policy, twin critics, and a sample of
/// visited states, plus the evaluation grade.
pub struct ExpertBundle {
    pub env_id: EnvId,
    pub policy: TrainedPolicy,
    pub critic_spec: NetworkSpec,
    pub q1: ParamVector,
    pub q2: ParamVector,
    /// Flat `[n][obs_dim]` sample of states visited by the expert.
    pub visited_states: Vec<f32>,
    pub iqm_return: f64,
    /// True when the expert only clears the relaxed desk-scale band.
    pub desk_grade: bool,
}

impl ExpertBundle {
    pub fn n_states(&self) -> usize {
        self.visited_states.len() / self.env_id.obs_dim()
    }

    pub fn state_at(&self, i: usize) -> &[f32] {
        let d = self.env_id.obs_dim();
        &self.visited_states[i * d..(i + 1) * d]
    }

    pub fn sample_state(&self, rng: &mut Rng) -> &[f32] {
        self.state_at(rng.index(self.n_states()))
    }

    /// Twin-critic value `min(Q1, Q2)(s, a)`.
    pub fn q_value(&self, obs: &[f32], action: &Action) -> f32 {
        match self.env_id.action_space() {
            ActionSpace::Discrete(_) => {
                let a = match action {
                    Action::Discrete(a) => *a,
                    _ => panic!("discrete expert asked for a continuous action"),
                };
                let q1 = nn::forward(&self.critic_spec, &self.q1, obs).expect("critic dims");
                let q2 = nn::forward(&self.critic_spec, &self.q2, obs).expect("critic dims");
                q1[a].min(q2[a])
            }
            ActionSpace::Box { .. } => {
                let a = match action {
                    Action::Continuous(v) => v.as_slice(),
                    _ => panic!("continuous expert asked for a discrete action"),
                };
                let mut input = obs.to_vec();
                input.extend_from_slice(a);
                let q1 = nn::forward(&self.critic_spec, &self.q1, &input).expect("critic dims");
                let q2 = nn::forward(&self.critic_spec, &self.q2, &input).expect("critic dims");
                q1[0].min(q2[0])
            }
        }
    }

    /// Expert's (pre-squash) policy head at a state.
    pub fn actor_head(&self, obs: &[f32]) -> Vec<f32> {
        nn::forward(&self.policy.spec, &self.policy.params, obs).expect("actor dims")
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let payload = ExpertPayload {
            env_id: self.env_id,
            actor_spec: self.policy.spec.clone(),
            critic_spec: self.critic_spec.clone(),
            iqm_return: self.iqm_return,
            desk_grade: self.desk_grade,
            n_states: self.n_states(),
        };
        checkpoint::save(
            path,
            checkpoint::EXPERT_FORMAT,
            &payload,
            &[
                ("actor", self.policy.params.as_slice()),
                ("q1", self.q1.as_slice()),
                ("q2", self.q2.as_slice()),
                ("states", &self.visited_states),
            ],
        )
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let c = checkpoint::load(path)?;
        if c.format != checkpoint::EXPERT_FORMAT {
            return Err(Error::Format(format!(
                "expected {}, found {}",
                checkpoint::EXPERT_FORMAT,
                c.format
            )));
        }
        let payload: ExpertPayload = c.payload_as()?;
        let actor = ParamVector(c.section("actor")?.to_vec());
        let space = payload.env_id.action_space();
        let policy = match space {
            ActionSpace::Discrete(_) => {
                TrainedPolicy::argmax(payload.actor_spec.clone(), actor, &space)
            }
            ActionSpace::Box { .. } => {
                TrainedPolicy::tanh_squash_half(payload.actor_spec.clone(), actor, &space)
            }
        };
        Ok(ExpertBundle {
            env_id: payload.env_id,
            policy,
            critic_spec: payload.critic_spec,
            q1: ParamVector(c.section("q1")?.to_vec()),
            q2: ParamVector(c.section("q2")?.to_vec()),
            visited_states: c.section("states")?.to_vec(),
            iqm_return: payload.iqm_return,
            desk_grade: payload.desk_grade,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ExpertPayload {
    env_id: EnvId,
    actor_spec: NetworkSpec,
    critic_spec: NetworkSpec,
    iqm_return: f64,
    desk_grade: bool,
    n_states: usize,
}

/// Expert training budget (environment steps). The full-scale budget is out
/// of desk range; these defaults aim at the relaxed bands.
pub fn default_expert_budget(env_id: EnvId) -> usize {
    match env_id {
        EnvId::CartPoleV1 => 60_000,
        EnvId::PendulumV1 => 120_000,
        _ => 100_000,
    }
}

/// Trains an SAC expert directly on the evaluation environment and grades it
/// against the documented bands. Fails with a diagnostic when the expert
/// lands below the desk band after the budget.
pub fn train_expert(env_id: EnvId, budget: usize, rng: &mut Rng) -> Result<ExpertBundle> {
    let env = ClassicEnv::new(env_id);
    let mut task = agents::task_for(env_id, AlgoId::Sac, rng, true);
    task.total_steps = budget;
    // expert-grade settings: bigger replay, slower optimizer and targets than
    // the inner-loop table, one update per step batch
    task.hp.buffer_size = 100_000.min(budget);
    task.hp.prefill = 2_000;
    task.hp.learning_rate = 7e-4;
    task.hp.polyak_tau = 0.995;
    task.hp.grad_steps = 1;

    let out = if env_id.is_discrete() {
        agents::sac::train_discrete_full(&task, &env, rng, None)?
    } else {
        agents::sac::train_continuous_full(&task, &env, rng, None)?
    };
    let policy = out.run.policy;

    // grade over 50 evaluation rollouts
    let eval_rng = rng.child(777);
    let mut returns = Vec::with_capacity(50);
    for s in 0..50u64 {
        let mut stream = eval_rng.child(s);
        returns.push(crate::envs::rollout(
            &env,
            &mut |obs| policy.act(obs),
            env_id.default_horizon(),
            &mut stream,
        ) as f64);
    }
    let iqm = analysis::iqm(&returns);
    let (full_low, full_high, desk_floor) = expert_bands(env_id);
    let desk_grade = !(iqm >= full_low && iqm <= full_high.max(full_low));
    if iqm < desk_floor {
        return Err(Error::Numerical(format!(
            "expert for {env_id} reached IQM {iqm:.1}, below the desk band {desk_floor:.1} \
             (full band [{full_low:.1}, {full_high:.1}]); consider a larger budget"
        )));
    }

    // record visited states from fresh expert episodes
    let mut visited = Vec::new();
    let mut visit_rng = rng.child(778);
    let mut episodes = 0;
    while visited.len() < 2_000 * env_id.obs_dim() && episodes < 200 {
        let mut state = env.reset(&mut visit_rng);
        visited.extend_from_slice(&state.obs);
        while !(state.done || state.truncated) {
            let (next, _) = env.step(&state, &policy.act(&state.obs))?;
            visited.extend_from_slice(&next.obs);
            state = next;
        }
        episodes += 1;
    }

    Ok(ExpertBundle {
        env_id,
        policy,
        critic_spec: out.critic_spec,
        q1: out.q1,
        q2: out.q2,
        visited_states: visited,
        iqm_return: iqm,
        desk_grade,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Synthetic,
    /// Online behavioral cloning; trained through the supervised path, not
    /// via the reward channel.
    BcKl,
    ActionDistance,
    ExpertQ,
}

impl std::str::FromStr for RewardKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(RewardKind::Synthetic),
            "bc_kl" => Ok(RewardKind::BcKl),
            "action_distance" => Ok(RewardKind::ActionDistance),
            "expert_q" => Ok(RewardKind::ExpertQ),
            other => Err(Error::Config(format!("unknown reward kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Synthetic,
    ExpertStates,
}

impl std::str::FromStr for InitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(InitKind::Synthetic),
            "expert_states" => Ok(InitKind::ExpertStates),
            other => Err(Error::Config(format!("unknown init kind '{other}'"))),
        }
    }
}

/// A single-step environment mixing an initial-state source with a reward
/// source. Rewards other than `Synthetic` read the expert bundle.
pub struct BaselineEnv<'a> {
    env_id: EnvId,
    reward_kind: RewardKind,
    init_kind: InitKind,
    scb: Option<&'a Scb>,
    expert: Option<&'a ExpertBundle>,
}

pub fn baseline_env<'a>(
    env_id: EnvId,
    expert: Option<&'a ExpertBundle>,
    scb: Option<&'a Scb>,
    reward_kind: RewardKind,
    init_kind: InitKind,
) -> Result<BaselineEnv<'a>> {
    if reward_kind == RewardKind::BcKl {
        return Err(Error::Config(
            "bc_kl replaces the update rule, not the reward channel; use train_bc_kl".into(),
        ));
    }
    if matches!(reward_kind, RewardKind::ActionDistance | RewardKind::ExpertQ)
        || init_kind == InitKind::ExpertStates
    {
        if expert.is_none() {
            return Err(Error::Config("this cell requires an expert bundle".into()));
        }
    }
    if reward_kind == RewardKind::Synthetic || init_kind == InitKind::Synthetic {
        match scb {
            None => return Err(Error::Config("this cell requires an SCB checkpoint".into())),
            Some(s) if s.spec().env_id != env_id => {
                return Err(Error::Config("SCB checkpoint is for a different environment".into()))
            }
            _ => {}
        }
    }
    Ok(BaselineEnv { env_id, reward_kind, init_kind, scb, expert })
}

impl Env for BaselineEnv<'_> {
    fn obs_dim(&self) -> usize {
        self.env_id.obs_dim()
    }

    fn action_space(&self) -> ActionSpace {
        self.env_id.action_space()
    }

    fn horizon(&self) -> usize {
        1
    }

    fn reset(&self, rng: &mut Rng) -> EnvState {
        let obs = match self.init_kind {
            InitKind::Synthetic => self.scb.unwrap().reset(rng).obs,
            InitKind::ExpertStates => self.expert.unwrap().sample_state(rng).to_vec(),
        };
        EnvState { obs, t: 0, done: false, truncated: false, internal: Vec::new() }
    }

    fn step(&self, state: &EnvState, action: &Action) -> Result<(EnvState, f32)> {
        if state.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        if !self.action_space().contains(action) {
            return Err(Error::Contract("action outside the space".into()));
        }
        let reward = match self.reward_kind {
            RewardKind::Synthetic => self.scb.unwrap().reward(&state.obs, action),
            RewardKind::ActionDistance => {
                let expert = self.expert.unwrap();
                let a_star = expert.policy.act(&state.obs);
                match (&a_star, action) {
                    (Action::Discrete(e), Action::Discrete(a)) => {
                        if e == a {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    (Action::Continuous(e), Action::Continuous(a)) => {
                        -e.iter()
                            .zip(a)
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f32>()
                            .sqrt()
                    }
                    _ => unreachable!("spaces validated"),
                }
            }
            RewardKind::ExpertQ => self.expert.unwrap().q_value(&state.obs, action),
            RewardKind::BcKl => unreachable!("rejected at construction"),
        };
        Ok((
            EnvState {
                obs: state.obs.clone(),
                t: state.t + 1,
                done: true,
                truncated: false,
                internal: Vec::new(),
            },
            reward,
        ))
    }
}

/// Online behavioral cloning: gradient steps minimizing `KL(pi || pi_expert)`
/// on batches of states from the chosen initial-state source. Continuous
/// policies match the expert's pre-squash Gaussian in closed form; discrete
/// policies match the categorical directly.
pub fn train_bc_kl(
    env_id: EnvId,
    expert: &ExpertBundle,
    init_kind: InitKind,
    scb: Option<&Scb>,
    total_steps: usize,
    rng: &mut Rng,
) -> Result<TrainedPolicy> {
    if init_kind == InitKind::Synthetic && scb.is_none() {
        return Err(Error::Config("synthetic init requires an SCB checkpoint".into()));
    }
    let obs_dim = env_id.obs_dim();
    let space = env_id.action_space();
    let batch = 50; // PPO minibatch size
    let updates = total_steps / batch;
    let activation = agents::agent_activation(env_id);

    let mut state_rng = rng.child(0);
    let draw_state = |rng: &mut Rng| -> Vec<f32> {
        match init_kind {
            InitKind::Synthetic => scb.unwrap().reset(rng).obs,
            InitKind::ExpertStates => expert.sample_state(rng).to_vec(),
        }
    };

    match &space {
        ActionSpace::Discrete(n) => {
            let spec = NetworkSpec::new(obs_dim, &[64, 64], *n, activation);
            let mut params = nn::init_params(&spec, rng);
            let mut opt = agents::Adam::new(5e-3, params.len());
            for _ in 0..updates {
                let mut obs = Vec::with_capacity(batch * obs_dim);
                let mut expert_logp = Vec::with_capacity(batch * n);
                for _ in 0..batch {
                    let s = draw_state(&mut state_rng);
                    let head = expert.actor_head(&s);
                    let m = head.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let lse =
                        m + head.iter().map(|l| (l - m).exp()).sum::<f32>().ln();
                    expert_logp.extend(head.iter().map(|l| l - lse));
                    obs.extend_from_slice(&s);
                }
                let mut t = Tape::<f32>::new();
                let p = t.param(1, params.len(), params.0.clone());
                let x = t.constant(batch, obs_dim, obs);
                let logits = t.mlp(&spec, p, x);
                let lp = t.log_softmax(logits);
                let probs = t.softmax(logits);
                let le = t.constant(batch, *n, expert_logp);
                let diff = t.sub(lp, le);
                let w = t.mul(probs, diff);
                let per_state = t.row_sum(w);
                let loss = t.mean_all(per_state);
                if !t.scalar_value(loss).is_finite() {
                    return Err(Error::Numerical("NaN BC-KL loss".into()));
                }
                let mut grads = t.backward(loss)?;
                opt.step(&mut params.0, &grads.take(p).unwrap());
            }
            Ok(TrainedPolicy::argmax(spec, params, &space))
        }
        ActionSpace::Box { low, .. } => {
            let k = low.len();
            let spec = NetworkSpec::new(obs_dim, &[64, 64], k, activation);
            let mut params = nn::init_params(&spec, rng);
            let mut log_std = vec![0.0f32; k];
            let mut opt = agents::Adam::new(5e-3, params.len());
            let mut opt_ls = agents::Adam::new(5e-3, k);
            for _ in 0..updates {
                let mut obs = Vec::with_capacity(batch * obs_dim);
                let mut mu_e = Vec::with_capacity(batch * k);
                let mut inv_two_var_e = Vec::with_capacity(batch * k);
                let mut log_std_e = Vec::with_capacity(batch * k);
                for _ in 0..batch {
                    let s = draw_state(&mut state_rng);
                    let head = expert.actor_head(&s);
                    for j in 0..k {
                        let ls = head[k + j].clamp(-5.0, 2.0);
                        mu_e.push(head[j]);
                        log_std_e.push(ls);
                        inv_two_var_e.push(0.5 * (-2.0 * ls).exp());
                    }
                    obs.extend_from_slice(&s);
                }
                // KL(N(mu, sigma) || N(mu_e, sigma_e)) summed over dims:
                // log sig_e - log sig + (sig^2 + (mu - mu_e)^2) / (2 sig_e^2) - 1/2
                let mut t = Tape::<f32>::new();
                let p = t.param(1, params.len(), params.0.clone());
                let p_ls = t.param(1, k, log_std.clone());
                let x = t.constant(batch, obs_dim, obs);
                let mu = t.mlp(&spec, p, x);
                let ls_rows = t.repeat_rows(p_ls, batch);
                let mu_e_c = t.constant(batch, k, mu_e);
                let ls_e_c = t.constant(batch, k, log_std_e);
                let itv_c = t.constant(batch, k, inv_two_var_e);
                let dmu = t.sub(mu, mu_e_c);
                let dmu2 = t.square(dmu);
                let two_ls = t.scale(ls_rows, 2.0);
                let var = t.exp(two_ls);
                let num = t.add(var, dmu2);
                let quad = t.mul(num, itv_c);
                let log_ratio = t.sub(ls_e_c, ls_rows);
                let kl_dim = t.add(log_ratio, quad);
                let kl_dim = t.add_const(kl_dim, -0.5);
                let per_state = t.row_sum(kl_dim);
                let loss = t.mean_all(per_state);
                if !t.scalar_value(loss).is_finite() {
                    return Err(Error::Numerical("NaN BC-KL loss".into()));
                }
                let mut grads = t.backward(loss)?;
                opt.step(&mut params.0, &grads.take(p).unwrap());
                opt_ls.step(&mut log_std, &grads.take(p_ls).unwrap());
            }
            // matching the pre-squash Gaussian means acting through the same
            // squash as the expert
            Ok(TrainedPolicy::tanh_squash(spec, params, &space))
        }
    }
}

/// Measured mean return of a uniform-random policy, the suite's zero point.
pub fn random_policy_return(env_id: EnvId, rollouts: usize, rng: &Rng) -> f64 {
    let env = ClassicEnv::new(env_id);
    let mut total = 0.0f64;
    for s in 0..rollouts as u64 {
        let mut stream = rng.child(s);
        let mut act_stream = rng.child(s ^ 0x5eed);
        let ret = crate::envs::rollout(
            &env,
            &mut |_| match env.action_space() {
                ActionSpace::Discrete(n) => Action::Discrete(act_stream.index(n)),
                ActionSpace::Box { low, high } => Action::Continuous(
                    low.iter().zip(&high).map(|(l, h)| act_stream.uniform_in(*l, *h)).collect(),
                ),
            },
            env_id.default_horizon(),
            &mut stream,
        );
        total += ret as f64;
    }
    total / rollouts as f64
}

/// One suite cell: a reward source crossed with an initial-state source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteCell {
    pub reward_kind: RewardKind,
    pub init_kind: InitKind,
}

/// One row of the comparison table, expert-normalized.
#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub reward_kind: RewardKind,
    pub init_kind: InitKind,
    pub algo: String,
    pub iqm: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub runs: usize,
}

/// Trains agents on every requested cell and reports expert-normalized
/// performance (random policy at 0, expert at 1) as IQM with bootstrap CIs
/// over independent runs.
pub fn baseline_suite(
    scb: &Scb,
    expert: &ExpertBundle,
    cells: &[SuiteCell],
    algos: &[AlgoId],
    runs_per_cell: usize,
    budget: usize,
    seed: u64,
) -> Result<Vec<SuiteRow>> {
    use rayon::prelude::*;

    let env_id = scb.spec().env_id;
    let root = Rng::new(seed);
    let random_ref = random_policy_return(env_id, 100, &root.child(0)) as f32;
    let expert_ref = expert.iqm_return as f32;
    let ee = ClassicEnv::new(env_id);
    let horizon = env_id.default_horizon();

    let eval_policy = |policy: &TrainedPolicy, rng: &Rng| -> f32 {
        let mut total = 0.0f32;
        for s in 0..20u64 {
            let mut stream = rng.child(s);
            total += crate::envs::rollout(&ee, &mut |obs| policy.act(obs), horizon, &mut stream);
        }
        total / 20.0
    };

    let mut rows = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        if cell.reward_kind == RewardKind::BcKl {
            let returns: Vec<f64> = (0..runs_per_cell)
                .into_par_iter()
                .map(|run| {
                    let run_rng = root.child(1 + ci as u64).child(run as u64);
                    let policy = train_bc_kl(
                        env_id,
                        expert,
                        cell.init_kind,
                        Some(scb),
                        budget,
                        &mut run_rng.child(0),
                    )?;
                    Ok(eval_policy(&policy, &run_rng.child(1)) as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            let normalized: Vec<f64> = returns
                .iter()
                .map(|r| ((*r as f32 - random_ref) / (expert_ref - random_ref)) as f64)
                .collect();
            let report =
                analysis::iqm_ci(&normalized, 1000, &mut Rng::new(seed ^ ci as u64))?;
            rows.push(SuiteRow {
                reward_kind: cell.reward_kind,
                init_kind: cell.init_kind,
                algo: "bc_kl".into(),
                iqm: report.iqm,
                ci_low: report.ci_low,
                ci_high: report.ci_high,
                runs: runs_per_cell,
            });
            continue;
        }

        let env = baseline_env(env_id, Some(expert), Some(scb), cell.reward_kind, cell.init_kind)?;
        for &algo in algos {
            let returns: Vec<f64> = (0..runs_per_cell)
                .into_par_iter()
                .map(|run| {
                    let run_rng =
                        root.child(1 + ci as u64).child(100 + algo as u64).child(run as u64);
                    let mut task = agents::task_for(env_id, algo, &mut run_rng.child(0), true);
                    task.total_steps = budget;
                    let trained = agents::train(&task, &env, &mut run_rng.child(1))?;
                    Ok(eval_policy(&trained.policy, &run_rng.child(2)) as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            let normalized: Vec<f64> = returns
                .iter()
                .map(|r| ((*r as f32 - random_ref) / (expert_ref - random_ref)) as f64)
                .collect();
            let report = analysis::iqm_ci(
                &normalized,
                1000,
                &mut Rng::new(seed ^ (ci as u64) << 8 ^ algo as u64),
            )?;
            rows.push(SuiteRow {
                reward_kind: cell.reward_kind,
                init_kind: cell.init_kind,
                algo: algo.as_str().into(),
                iqm: report.iqm,
                ci_low: report.ci_low,
                ci_high: report.ci_high,
                runs: runs_per_cell,
            });
        }
    }
    Ok(rows)
}
