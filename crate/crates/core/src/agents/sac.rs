//! Soft actor-critic: the discrete variant with categorical policies and the
//! continuous variant with tanh-squashed Gaussians. Both use twin critics
//! with min targets and automatic temperature tuning.
//!
//! Target entropy: `ratio * ln|A|` for discrete action spaces (the ratio is a
//! sampled hyperparameter) and `-dim(A)` for continuous ones.

use super::{optim, EnvBank, EvalHook, InnerTask, Replay, TrainLog, TrainRun, TrainedPolicy};
use crate::envs::{Action, ActionSpace, Env};
use crate::nn::{self, NetworkSpec, ParamVector};
use crate::tape::Tape;
use crate::{Error, Result, Rng};

/// Training output extended with the critic ensemble, used by expert bundles.
pub(crate) struct SacOutput {
    pub run: TrainRun,
    pub critic_spec: NetworkSpec,
    pub q1: ParamVector,
    pub q2: ParamVector,
}

const LOG_STD_MIN: f32 = -5.0;
const LOG_STD_MAX: f32 = 2.0;
const SQUASH_EPS: f32 = 1e-6;

pub(super) fn train_discrete(
    task: &InnerTask,
    env: &dyn Env,
    rng: &mut Rng,
    hook: Option<EvalHook<'_>>,
) -> Result<TrainRun> {
    train_discrete_full(task, env, rng, hook).map(|o| o.run)
}

pub(crate) fn train_discrete_full(
    task: &InnerTask,
    env: &dyn Env,
    rng: &mut Rng,
    mut hook: Option<EvalHook<'_>>,
) -> Result<SacOutput> {
    let hp = &task.hp;
    let obs_dim = env.obs_dim();
    let space = env.action_space();
    let n_actions = match space {
        ActionSpace::Discrete(n) => n,
        _ => return Err(Error::Config("discrete SAC requires a discrete space".into())),
    };
    let target_entropy = hp.target_entropy_ratio * (n_actions as f32).ln();

    let actor_spec = task.net.clone();
    let critic_spec = NetworkSpec::new(obs_dim, &task.net.hidden, n_actions, task.net.activation);
    let mut actor = nn::init_params(&actor_spec, rng);
    let mut q1 = nn::init_params(&critic_spec, rng);
    let mut q2 = nn::init_params(&critic_spec, rng);
    let mut t1 = q1.clone();
    let mut t2 = q2.clone();
    let mut log_alpha = 0.0f32;

    let mut opt_actor = optim::Adam::new(hp.learning_rate, actor.len());
    let mut opt_q1 = optim::Adam::new(hp.learning_rate, q1.len());
    let mut opt_q2 = optim::Adam::new(hp.learning_rate, q2.len());
    let mut opt_alpha = optim::Adam::new(hp.learning_rate, 1);

    let mut buffer = Replay::new(hp.buffer_size, obs_dim, 0);
    let mut bank = EnvBank::new(env, hp.num_envs, rng.child(0));
    let mut act_rng = rng.child(1);
    let mut sample_rng = rng.child(2);

    let mut log = TrainLog { steps_consumed: task.total_steps, ..TrainLog::default() };
    let mut step = 0usize;

    while step < task.total_steps {
        for e in 0..hp.num_envs {
            if step >= task.total_steps {
                break;
            }
            let obs = bank.obs(e).to_vec();
            let action = if buffer.len() < hp.prefill {
                act_rng.index(n_actions)
            } else {
                let logits = nn::forward(&actor_spec, &actor, &obs)?;
                sample_from_logits(&logits, &mut act_rng)
            };
            let (next, reward, finished) = bank.step(e, &Action::Discrete(action))?;
            if reward.is_nan() {
                return Err(Error::Numerical("NaN reward during SAC rollout".into()));
            }
            buffer.push_discrete(&obs, action, reward, &next.obs, next.done);
            step += 1;
            if let Some(ret) = finished {
                log.episodes.push((step, ret));
            }
            if let Some((every, f)) = hook.as_mut() {
                if step % *every == 0 {
                    f(step, &TrainedPolicy::argmax(actor_spec.clone(), actor.clone(), &space));
                }
            }
        }
        if buffer.len() < hp.prefill {
            continue;
        }

        for _ in 0..hp.grad_steps {
            let idx = buffer.sample_indices(hp.batch_size, &mut sample_rng);
            let b = idx.len();
            let alpha = log_alpha.exp();

            // --- targets (no grad) ---
            let next_obs = buffer.gather_next_obs(&idx);
            let next_logits = super::forward_batch(&actor_spec, actor.as_slice(), &next_obs, b);
            let tq1 = super::forward_batch(&critic_spec, t1.as_slice(), &next_obs, b);
            let tq2 = super::forward_batch(&critic_spec, t2.as_slice(), &next_obs, b);
            let mut targets = Vec::with_capacity(b);
            for (r, &i) in idx.iter().enumerate() {
                let logits = &next_logits[r * n_actions..(r + 1) * n_actions];
                let (probs, log_probs) = softmax_and_log(logits);
                let mut v = 0.0f32;
                for a in 0..n_actions {
                    let qmin = tq1[r * n_actions + a].min(tq2[r * n_actions + a]);
                    v += probs[a] * (qmin - alpha * log_probs[a]);
                }
                let nonterminal = if buffer.terminated_at(i) { 0.0 } else { 1.0 };
                targets.push(buffer.reward_at(i) + hp.discount * nonterminal * v);
            }

            // --- critic update ---
            let obs_batch = buffer.gather_obs(&idx);
            let mut mask = vec![0.0f32; b * n_actions];
            for (r, &i) in idx.iter().enumerate() {
                mask[r * n_actions + buffer.discrete_action_at(i)] = 1.0;
            }
            let mut t = Tape::<f32>::new();
            let p1 = t.param(1, q1.len(), q1.0.clone());
            let p2 = t.param(1, q2.len(), q2.0.clone());
            let x = t.constant(b, obs_dim, obs_batch.clone());
            let m = t.constant(b, n_actions, mask);
            let y = t.constant(b, 1, targets);
            let q1_all = t.mlp(&critic_spec, p1, x);
            let q2_all = t.mlp(&critic_spec, p2, x);
            let q1_sa = {
                let picked = t.mul(q1_all, m);
                t.row_sum(picked)
            };
            let q2_sa = {
                let picked = t.mul(q2_all, m);
                t.row_sum(picked)
            };
            let e1 = t.sub(q1_sa, y);
            let e2 = t.sub(q2_sa, y);
            let s1 = t.square(e1);
            let s2 = t.square(e2);
            let m1 = t.mean_all(s1);
            let m2 = t.mean_all(s2);
            let closs = t.add(m1, m2);
            let closs_value = t.scalar_value(closs);
            if !closs_value.is_finite() {
                return Err(Error::Numerical("NaN/inf SAC critic loss".into()));
            }
            let mut grads = t.backward(closs)?;
            opt_q1.step(&mut q1.0, &grads.take(p1).unwrap());
            opt_q2.step(&mut q2.0, &grads.take(p2).unwrap());

            // --- actor update (critics held fixed) ---
            let cq1 = super::forward_batch(&critic_spec, q1.as_slice(), &obs_batch, b);
            let cq2 = super::forward_batch(&critic_spec, q2.as_slice(), &obs_batch, b);
            let qmin: Vec<f32> = cq1.iter().zip(&cq2).map(|(a, c)| a.min(*c)).collect();
            let mut t = Tape::<f32>::new();
            let pa = t.param(1, actor.len(), actor.0.clone());
            let x = t.constant(b, obs_dim, obs_batch.clone());
            let logits = t.mlp(&actor_spec, pa, x);
            let log_probs = t.log_softmax(logits);
            let probs = t.softmax(logits);
            let scaled_lp = t.scale(log_probs, alpha);
            let qc = t.constant(b, n_actions, qmin);
            let inner = t.sub(scaled_lp, qc);
            let weighted = t.mul(probs, inner);
            let per_state = t.row_sum(weighted);
            let aloss = t.mean_all(per_state);
            let aloss_value = t.scalar_value(aloss);
            if !aloss_value.is_finite() {
                return Err(Error::Numerical("NaN/inf SAC actor loss".into()));
            }
            // entropy of the current policy, reused for the temperature update
            let mean_entropy = {
                let vals = t.value(probs).to_vec();
                let lps = t.value(log_probs).to_vec();
                let mut h = 0.0f32;
                for r in 0..b {
                    for a in 0..n_actions {
                        h -= vals[r * n_actions + a] * lps[r * n_actions + a];
                    }
                }
                h / b as f32
            };
            let mut grads = t.backward(aloss)?;
            opt_actor.step(&mut actor.0, &grads.take(pa).unwrap());

            // --- temperature: d/d(log alpha) E[-log_alpha (log pi + H_bar)] ---
            let alpha_grad = mean_entropy - target_entropy;
            let mut la = [log_alpha];
            opt_alpha.step(&mut la, &[alpha_grad]);
            log_alpha = la[0].clamp(-10.0, 5.0);

            // --- Polyak targets ---
            optim::polyak_update(&mut t1.0, &q1.0, hp.polyak_tau);
            optim::polyak_update(&mut t2.0, &q2.0, hp.polyak_tau);

            if log.losses.last().map_or(true, |(s, _)| step > *s) {
                log.losses.push((step, closs_value));
            }
        }
    }
    if !actor.all_finite() || !q1.all_finite() {
        return Err(Error::Numerical("NaN SAC parameters".into()));
    }
    Ok(SacOutput {
        run: TrainRun { policy: TrainedPolicy::argmax(actor_spec, actor, &space), log },
        critic_spec,
        q1,
        q2,
    })
}

pub(super) fn train_continuous(
    task: &InnerTask,
    env: &dyn Env,
    rng: &mut Rng,
    hook: Option<EvalHook<'_>>,
) -> Result<TrainRun> {
    train_continuous_full(task, env, rng, hook).map(|o| o.run)
}

pub(crate) fn train_continuous_full(
    task: &InnerTask,
    env: &dyn Env,
    rng: &mut Rng,
    mut hook: Option<EvalHook<'_>>,
) -> Result<SacOutput> {
    let hp = &task.hp;
    let obs_dim = env.obs_dim();
    let space = env.action_space();
    let (low, high) = match &space {
        ActionSpace::Box { low, high } => (low.clone(), high.clone()),
        _ => return Err(Error::Config("continuous SAC requires a box space".into())),
    };
    let k = low.len();
    let scale: Vec<f32> = low.iter().zip(&high).map(|(l, h)| 0.5 * (h - l)).collect();
    let center: Vec<f32> = low.iter().zip(&high).map(|(l, h)| 0.5 * (h + l)).collect();
    let log_scale_sum: f32 = scale.iter().map(|s| s.ln()).sum();
    let target_entropy = -(k as f32);

    // actor head: [mean(k) || log_std(k)]
    let actor_spec = task.net.clone();
    debug_assert_eq!(actor_spec.output_dim, 2 * k);
    let critic_spec = NetworkSpec::new(obs_dim + k, &task.net.hidden, 1, task.net.activation);
    let mut actor = nn::init_params(&actor_spec, rng);
    let mut q1 = nn::init_params(&critic_spec, rng);
    let mut q2 = nn::init_params(&critic_spec, rng);
    let mut t1 = q1.clone();
    let mut t2 = q2.clone();
    let mut log_alpha = 0.0f32;

    let mut opt_actor = optim::Adam::new(hp.learning_rate, actor.len());
    let mut opt_q1 = optim::Adam::new(hp.learning_rate, q1.len());
    let mut opt_q2 = optim::Adam::new(hp.learning_rate, q2.len());
    let mut opt_alpha = optim::Adam::new(hp.learning_rate, 1);

    let mut buffer = Replay::new(hp.buffer_size, obs_dim, k);
    let mut bank = EnvBank::new(env, hp.num_envs, rng.child(0));
    let mut act_rng = rng.child(1);
    let mut sample_rng = rng.child(2);

    let mut log = TrainLog { steps_consumed: task.total_steps, ..TrainLog::default() };
    let mut step = 0usize;

    // squashed-Gaussian sample in env units plus its log-prob
    let policy_sample = |head: &[f32], rng: &mut Rng| -> (Vec<f32>, f32) {
        let mut a_env = Vec::with_capacity(k);
        let mut logp = 0.0f32;
        for j in 0..k {
            let mean = head[j];
            let ls = head[k + j].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let eps: f32 = rng.normal_f32();
            let u = mean + ls.exp() * eps;
            let a = u.tanh();
            logp += -0.5 * eps * eps - ls - 0.5 * (2.0 * std::f32::consts::PI).ln();
            logp -= (1.0 - a * a + SQUASH_EPS).ln();
            a_env.push(a * scale[j] + center[j]);
        }
        (a_env, logp - log_scale_sum)
    };

    while step < task.total_steps {
        for e in 0..hp.num_envs {
            if step >= task.total_steps {
                break;
            }
            let obs = bank.obs(e).to_vec();
            let action = if buffer.len() < hp.prefill {
                (0..k).map(|j| act_rng.uniform_in(low[j], high[j])).collect::<Vec<f32>>()
            } else {
                let head = nn::forward(&actor_spec, &actor, &obs)?;
                policy_sample(&head, &mut act_rng).0
            };
            let (next, reward, finished) = bank.step(e, &Action::Continuous(action.clone()))?;
            if reward.is_nan() {
                return Err(Error::Numerical("NaN reward during SAC rollout".into()));
            }
            buffer.push_continuous(&obs, &action, reward, &next.obs, next.done);
            step += 1;
            if let Some(ret) = finished {
                log.episodes.push((step, ret));
            }
            if let Some((every, f)) = hook.as_mut() {
                if step % *every == 0 {
                    f(
                        step,
                        &TrainedPolicy::tanh_squash_half(actor_spec.clone(), actor.clone(), &space),
                    );
                }
            }
        }
        if buffer.len() < hp.prefill {
            continue;
        }

        for _ in 0..hp.grad_steps {
            let idx = buffer.sample_indices(hp.batch_size, &mut sample_rng);
            let b = idx.len();
            let alpha = log_alpha.exp();

            // --- targets with fresh next actions (no grad) ---
            let next_obs = buffer.gather_next_obs(&idx);
            let next_heads = super::forward_batch(&actor_spec, actor.as_slice(), &next_obs, b);
            let mut next_inputs = Vec::with_capacity(b * (obs_dim + k));
            let mut next_logps = Vec::with_capacity(b);
            for r in 0..b {
                let head = &next_heads[r * 2 * k..(r + 1) * 2 * k];
                let (a_env, logp) = policy_sample(head, &mut sample_rng);
                next_inputs.extend_from_slice(&next_obs[r * obs_dim..(r + 1) * obs_dim]);
                next_inputs.extend_from_slice(&a_env);
                next_logps.push(logp);
            }
            let tq1 = super::forward_batch(&critic_spec, t1.as_slice(), &next_inputs, b);
            let tq2 = super::forward_batch(&critic_spec, t2.as_slice(), &next_inputs, b);
            let mut targets = Vec::with_capacity(b);
            for (r, &i) in idx.iter().enumerate() {
                let qmin = tq1[r].min(tq2[r]);
                let nonterminal = if buffer.terminated_at(i) { 0.0 } else { 1.0 };
                targets.push(
                    buffer.reward_at(i)
                        + hp.discount * nonterminal * (qmin - alpha * next_logps[r]),
                );
            }

            // --- critic update ---
            let obs_batch = buffer.gather_obs(&idx);
            let act_batch = buffer.gather_continuous_actions(&idx);
            let mut t = Tape::<f32>::new();
            let p1 = t.param(1, q1.len(), q1.0.clone());
            let p2 = t.param(1, q2.len(), q2.0.clone());
            let xo = t.constant(b, obs_dim, obs_batch.clone());
            let xa = t.constant(b, k, act_batch);
            let xin = t.concat_cols(xo, xa);
            let q1v = t.mlp(&critic_spec, p1, xin);
            let q2v = t.mlp(&critic_spec, p2, xin);
            let y = t.constant(b, 1, targets);
            let e1 = t.sub(q1v, y);
            let e2 = t.sub(q2v, y);
            let s1 = t.square(e1);
            let s2 = t.square(e2);
            let m1 = t.mean_all(s1);
            let m2 = t.mean_all(s2);
            let closs = t.add(m1, m2);
            let closs_value = t.scalar_value(closs);
            if !closs_value.is_finite() {
                return Err(Error::Numerical("NaN/inf SAC critic loss".into()));
            }
            let mut grads = t.backward(closs)?;
            opt_q1.step(&mut q1.0, &grads.take(p1).unwrap());
            opt_q2.step(&mut q2.0, &grads.take(p2).unwrap());

            // --- actor update: reparameterized action through frozen critics ---
            let eps: Vec<f32> = (0..b * k).map(|_| sample_rng.normal_f32()).collect();
            let mut t = Tape::<f32>::new();
            let pa = t.param(1, actor.len(), actor.0.clone());
            let cq1 = t.constant(1, q1.len(), q1.0.clone());
            let cq2 = t.constant(1, q2.len(), q2.0.clone());
            let xo = t.constant(b, obs_dim, obs_batch);
            let head = t.mlp(&actor_spec, pa, xo);
            let mean = t.slice_cols(head, 0, k);
            let ls_raw = t.slice_cols(head, k, k);
            let ls = t.clip(ls_raw, LOG_STD_MIN, LOG_STD_MAX);
            let sigma = t.exp(ls);
            let noise = t.constant(b, k, eps);
            let delta = t.mul(sigma, noise);
            let u = t.add(mean, delta);
            let a = t.tanh(u);
            // log pi = gaussian log density - sum log(1 - a^2 + eps) - sum log scale
            let base_lp = t.gaussian_log_density(u, mean, ls);
            let a2 = t.square(a);
            let one_minus = t.neg(a2);
            let one_minus = t.add_const(one_minus, 1.0 + SQUASH_EPS);
            let log_det = t.log(one_minus);
            let corr = t.row_sum(log_det);
            let lp = t.sub(base_lp, corr);
            let lp = t.add_const(lp, -log_scale_sum);
            // scale the action into env units for the critic input
            let scale_c = t.constant(1, k, scale.clone());
            let scale_rows = t.repeat_rows(scale_c, b);
            let center_c = t.constant(1, k, center.clone());
            let center_rows = t.repeat_rows(center_c, b);
            let a_scaled = t.mul(a, scale_rows);
            let a_env = t.add(a_scaled, center_rows);
            let xin = t.concat_cols(xo, a_env);
            let q1n = t.mlp(&critic_spec, cq1, xin);
            let q2n = t.mlp(&critic_spec, cq2, xin);
            let qmin = t.min(q1n, q2n);
            let alpha_lp = t.scale(lp, alpha);
            let diff = t.sub(alpha_lp, qmin);
            let aloss = t.mean_all(diff);
            let aloss_value = t.scalar_value(aloss);
            if !aloss_value.is_finite() {
                return Err(Error::Numerical("NaN/inf SAC actor loss".into()));
            }
            let mean_logp = t.value(lp).iter().sum::<f32>() / b as f32;
            let mut grads = t.backward(aloss)?;
            opt_actor.step(&mut actor.0, &grads.take(pa).unwrap());

            // --- temperature ---
            let alpha_grad = -(mean_logp + target_entropy);
            let mut la = [log_alpha];
            opt_alpha.step(&mut la, &[alpha_grad]);
            log_alpha = la[0].clamp(-10.0, 5.0);

            // --- Polyak targets ---
            optim::polyak_update(&mut t1.0, &q1.0, hp.polyak_tau);
            optim::polyak_update(&mut t2.0, &q2.0, hp.polyak_tau);

            if log.losses.last().map_or(true, |(s, _)| step > *s) {
                log.losses.push((step, closs_value));
            }
        }
    }
    if !actor.all_finite() || !q1.all_finite() {
        return Err(Error::Numerical("NaN SAC parameters".into()));
    }
    Ok(SacOutput {
        run: TrainRun { policy: TrainedPolicy::tanh_squash_half(actor_spec, actor, &space), log },
        critic_spec,
        q1,
        q2,
    })
}

fn sample_from_logits(logits: &[f32], rng: &mut Rng) -> usize {
    let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f32 = exps.iter().sum();
    let mut u = rng.uniform_f32() * total;
    for (i, e) in exps.iter().enumerate() {
        if u < *e {
            return i;
        }
        u -= e;
    }
    exps.len() - 1
}

fn softmax_and_log(logits: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f32 = exps.iter().sum();
    let lse = m + total.ln();
    (
        exps.iter().map(|e| e / total).collect(),
        logits.iter().map(|l| l - lse).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvId;
    use crate::scb::{Scb, ScbParams, ScbSpec};

    #[test]
    fn softmax_and_log_consistency() {
        let (p, lp) = softmax_and_log(&[1.0, 2.0, 3.0]);
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        for (pi, li) in p.iter().zip(&lp) {
            assert!((pi.ln() - li).abs() < 1e-5);
        }
    }

    #[test]
    fn discrete_sac_runs_on_a_cb_and_stays_finite() {
        let spec = ScbSpec::cb(EnvId::CartPoleV1);
        let mut rng = Rng::new(8);
        let params = ScbParams::init_random(&spec, &mut rng);
        let scb = Scb::new(spec, params).unwrap();
        let mut task =
            super::super::task_for(EnvId::CartPoleV1, super::super::AlgoId::Sac, &mut rng, true);
        task.total_steps = 2_000;
        let run = train_discrete(&task, &scb, &mut Rng::new(1), None).unwrap();
        assert_eq!(run.log.steps_consumed, 2_000);
        assert!(run.policy.params.all_finite());
    }

    #[test]
    fn continuous_sac_learns_a_constant_action_bandit() {
        // Reward -(a - 0.3)^2 on Pendulum's action space: the argmax action is
        // 0.3, so after training the deterministic policy should sit near it.
        struct TargetBandit;
        impl Env for TargetBandit {
            fn obs_dim(&self) -> usize {
                3
            }
            fn action_space(&self) -> ActionSpace {
                ActionSpace::Box { low: vec![-2.0], high: vec![2.0] }
            }
            fn horizon(&self) -> usize {
                1
            }
            fn reset(&self, rng: &mut Rng) -> crate::envs::EnvState {
                crate::envs::EnvState {
                    obs: (0..3).map(|_| rng.normal_f32()).collect(),
                    t: 0,
                    done: false,
                    truncated: false,
                    internal: Vec::new(),
                }
            }
            fn step(
                &self,
                state: &crate::envs::EnvState,
                action: &Action,
            ) -> crate::Result<(crate::envs::EnvState, f32)> {
                let a = match action {
                    Action::Continuous(v) => v[0],
                    _ => unreachable!(),
                };
                let r = -(a - 0.3) * (a - 0.3);
                Ok((
                    crate::envs::EnvState {
                        obs: state.obs.clone(),
                        t: 1,
                        done: true,
                        truncated: false,
                        internal: Vec::new(),
                    },
                    r,
                ))
            }
        }
        let env = TargetBandit;
        let mut rng = Rng::new(10);
        let mut task =
            super::super::task_for(EnvId::PendulumV1, super::super::AlgoId::Sac, &mut rng, true);
        task.total_steps = 6_000;
        let run = train_continuous(&task, &env, &mut Rng::new(3), None).unwrap();
        let mut probe = Rng::new(5);
        for _ in 0..20 {
            let s = env.reset(&mut probe);
            match run.policy.act(&s.obs) {
                Action::Continuous(v) => {
                    assert!((v[0] - 0.3).abs() < 0.15, "policy action {} far from 0.3", v[0])
                }
                _ => unreachable!(),
            }
        }
    }
}
