//! Proximal policy optimization with clipped surrogate, GAE, and
//! round-robin multi-env rollouts.
//!
//! Parameters live in three groups (actor, state-independent log-std for
//! continuous actions, critic) stepped by per-group Adam under a joint
//! global-norm clip, which is elementwise-identical to a single optimizer
//! over the concatenation.

use super::{gae::gae, optim, EnvBank, EvalHook, InnerTask, TrainLog, TrainRun, TrainedPolicy};
use crate::envs::{Action, ActionSpace, Env};
use crate::nn::{self, NetworkSpec, ParamVector};
use crate::tape::Tape;
use crate::{Error, Result, Rng};

const HALF_LOG_2PI_E: f32 = 1.4189385; // 0.5 * ln(2*pi*e)

struct Segment {
    obs: Vec<f32>,
    discrete_actions: Vec<usize>,
    continuous_actions: Vec<f32>,
    logps: Vec<f32>,
    values: Vec<f32>,
    rewards: Vec<f32>,
    len: usize,
    terminated: bool,
    boot_value: f32,
}

pub(super) fn train(
    task: &InnerTask,
    env: &dyn Env,
    rng: &mut Rng,
    mut hook: Option<EvalHook<'_>>,
) -> Result<TrainRun> {
    let hp = &task.hp;
    let obs_dim = env.obs_dim();
    let space = env.action_space();
    let discrete = matches!(space, ActionSpace::Discrete(_));
    let (n_actions, act_dim, low, high) = match &space {
        ActionSpace::Discrete(n) => (*n, 0, Vec::new(), Vec::new()),
        ActionSpace::Box { low, high } => (0, low.len(), low.clone(), high.clone()),
    };

    let actor_spec = task.net.clone();
    let critic_spec = NetworkSpec::new(obs_dim, &task.net.hidden, 1, task.net.activation);
    let mut actor = nn::init_params(&actor_spec, rng);
    let mut critic = nn::init_params(&critic_spec, rng);
    let mut log_std = vec![0.0f32; act_dim];

    let mut opt_actor = optim::Adam::new(hp.learning_rate, actor.len());
    let mut opt_critic = optim::Adam::new(hp.learning_rate, critic.len());
    let mut opt_log_std = optim::Adam::new(hp.learning_rate, act_dim);

    let rollout_size = hp.num_envs * hp.num_steps;
    let iterations = task.total_steps / rollout_size;
    let consumed = iterations * rollout_size;
    let mut log = TrainLog {
        steps_consumed: consumed,
        step_deficit: task.total_steps - consumed,
        ..TrainLog::default()
    };

    let mut bank = EnvBank::new(env, hp.num_envs, rng.child(0));
    let mut act_rng = rng.child(1);
    let mut shuffle_rng = rng.child(2);
    let mut global_step = 0usize;

    let snapshot = |actor: &ParamVector| {
        if discrete {
            TrainedPolicy::argmax(actor_spec.clone(), actor.clone(), &space)
        } else {
            TrainedPolicy::mean_clamp(actor_spec.clone(), actor.clone(), &space)
        }
    };

    for _iter in 0..iterations {
        // --- collect one rollout ---
        let mut open: Vec<Segment> = (0..hp.num_envs)
            .map(|_| Segment {
                obs: Vec::new(),
                discrete_actions: Vec::new(),
                continuous_actions: Vec::new(),
                logps: Vec::new(),
                values: Vec::new(),
                rewards: Vec::new(),
                len: 0,
                terminated: false,
                boot_value: 0.0,
            })
            .collect();
        let mut closed: Vec<Segment> = Vec::new();

        for _step in 0..hp.num_steps {
            // batch the per-env forward passes
            let mut obs_batch = Vec::with_capacity(hp.num_envs * obs_dim);
            for e in 0..hp.num_envs {
                obs_batch.extend_from_slice(bank.obs(e));
            }
            let heads =
                super::forward_batch(&actor_spec, actor.as_slice(), &obs_batch, hp.num_envs);
            let values =
                super::forward_batch(&critic_spec, critic.as_slice(), &obs_batch, hp.num_envs);

            for e in 0..hp.num_envs {
                let obs = obs_batch[e * obs_dim..(e + 1) * obs_dim].to_vec();
                let value = values[e];
                let seg = &mut open[e];
                seg.obs.extend_from_slice(&obs);
                seg.values.push(value);

                let (action, logp) = if discrete {
                    let logits = &heads[e * n_actions..(e + 1) * n_actions];
                    let (a, lp) = sample_categorical(logits, &mut act_rng);
                    seg.discrete_actions.push(a);
                    (Action::Discrete(a), lp)
                } else {
                    let mean = &heads[e * act_dim..(e + 1) * act_dim];
                    let mut raw = Vec::with_capacity(act_dim);
                    let mut lp = 0.0f32;
                    for j in 0..act_dim {
                        let sigma = log_std[j].exp();
                        let eps = act_rng.normal_f32();
                        let x = mean[j] + sigma * eps;
                        lp += -0.5 * eps * eps - log_std[j] - 0.5 * (2.0 * std::f32::consts::PI).ln();
                        raw.push(x);
                    }
                    seg.continuous_actions.extend_from_slice(&raw);
                    let clamped: Vec<f32> =
                        raw.iter().zip(low.iter().zip(&high)).map(|(x, (l, h))| x.clamp(*l, *h)).collect();
                    (Action::Continuous(clamped), lp)
                };
                seg.logps.push(logp);

                let (next, reward, finished) = bank.step(e, &action)?;
                if reward.is_nan() {
                    return Err(Error::Numerical("NaN reward during PPO rollout".into()));
                }
                seg.rewards.push(reward);
                seg.len += 1;
                global_step += 1;
                if let Some((every, f)) = hook.as_mut() {
                    if global_step % *every == 0 {
                        f(global_step, &snapshot(&actor));
                    }
                }

                if let Some(ret) = finished {
                    log.episodes.push((global_step, ret));
                    let mut done_seg = std::mem::replace(
                        &mut open[e],
                        Segment {
                            obs: Vec::new(),
                            discrete_actions: Vec::new(),
                            continuous_actions: Vec::new(),
                            logps: Vec::new(),
                            values: Vec::new(),
                            rewards: Vec::new(),
                            len: 0,
                            terminated: false,
                            boot_value: 0.0,
                        },
                    );
                    done_seg.terminated = next.done;
                    // truncation bootstraps from the cut state's value
                    if !next.done {
                        let v = nn::forward(&critic_spec, &critic, &next.obs)?[0];
                        done_seg.boot_value = v;
                    }
                    closed.push(done_seg);
                }
            }
        }
        // close the still-open segments with a bootstrap at the cut
        for e in 0..hp.num_envs {
            let seg = &mut open[e];
            if seg.len > 0 {
                seg.terminated = false;
                seg.boot_value = nn::forward(&critic_spec, &critic, bank.obs(e))?[0];
            }
        }
        closed.extend(open.into_iter().filter(|s| s.len > 0));

        // --- advantages ---
        let mut flat_obs = Vec::with_capacity(rollout_size * obs_dim);
        let mut flat_dact: Vec<usize> = Vec::new();
        let mut flat_cact: Vec<f32> = Vec::new();
        let mut flat_logp = Vec::with_capacity(rollout_size);
        let mut flat_adv = Vec::with_capacity(rollout_size);
        let mut flat_ret = Vec::with_capacity(rollout_size);
        for seg in &closed {
            let mut values = seg.values.clone();
            values.push(seg.boot_value);
            let mut dones = vec![false; seg.len];
            if seg.terminated {
                dones[seg.len - 1] = true;
            }
            let adv = gae(&seg.rewards, &values, &dones, hp.discount, hp.gae_lambda);
            for i in 0..seg.len {
                flat_adv.push(adv[i]);
                flat_ret.push(adv[i] + seg.values[i]);
                flat_logp.push(seg.logps[i]);
            }
            flat_obs.extend_from_slice(&seg.obs);
            flat_dact.extend_from_slice(&seg.discrete_actions);
            flat_cact.extend_from_slice(&seg.continuous_actions);
        }
        let batch = flat_logp.len();
        debug_assert_eq!(batch, rollout_size);

        // --- clipped-surrogate updates ---
        let mb_size = batch / hp.num_minibatches;
        let mut perm: Vec<usize> = (0..batch).collect();
        for _epoch in 0..hp.num_epochs {
            // Fisher-Yates with the dedicated shuffle stream
            for i in (1..batch).rev() {
                let j = shuffle_rng.index(i + 1);
                perm.swap(i, j);
            }
            for mb in 0..hp.num_minibatches {
                let idx = &perm[mb * mb_size..(mb + 1) * mb_size];
                let loss = minibatch_update(
                    idx,
                    &flat_obs,
                    &flat_dact,
                    &flat_cact,
                    &flat_logp,
                    &flat_adv,
                    &flat_ret,
                    obs_dim,
                    n_actions,
                    act_dim,
                    &actor_spec,
                    &critic_spec,
                    &mut actor.0,
                    &mut critic.0,
                    &mut log_std,
                    &mut opt_actor,
                    &mut opt_critic,
                    &mut opt_log_std,
                    hp,
                )?;
                if !loss.is_finite() {
                    return Err(Error::Numerical("NaN/inf PPO loss".into()));
                }
                if log.losses.last().map_or(true, |(s, _)| global_step > *s) {
                    log.losses.push((global_step, loss));
                }
            }
        }
        if !actor.all_finite() || !critic.all_finite() {
            return Err(Error::Numerical("NaN PPO parameters".into()));
        }
    }

    Ok(TrainRun { policy: snapshot(&actor), log })
}

#[allow(clippy::too_many_arguments)]
fn minibatch_update(
    idx: &[usize],
    flat_obs: &[f32],
    flat_dact: &[usize],
    flat_cact: &[f32],
    flat_logp: &[f32],
    flat_adv: &[f32],
    flat_ret: &[f32],
    obs_dim: usize,
    n_actions: usize,
    act_dim: usize,
    actor_spec: &NetworkSpec,
    critic_spec: &NetworkSpec,
    actor: &mut Vec<f32>,
    critic: &mut Vec<f32>,
    log_std: &mut Vec<f32>,
    opt_actor: &mut optim::Adam,
    opt_critic: &mut optim::Adam,
    opt_log_std: &mut optim::Adam,
    hp: &super::Hp,
) -> Result<f32> {
    let mb = idx.len();
    let discrete = act_dim == 0;

    let mut obs = Vec::with_capacity(mb * obs_dim);
    let mut old_logp = Vec::with_capacity(mb);
    let mut adv = Vec::with_capacity(mb);
    let mut ret = Vec::with_capacity(mb);
    for &i in idx {
        obs.extend_from_slice(&flat_obs[i * obs_dim..(i + 1) * obs_dim]);
        old_logp.push(flat_logp[i]);
        adv.push(flat_adv[i]);
        ret.push(flat_ret[i]);
    }
    // advantage normalization within the minibatch
    let mean = adv.iter().sum::<f32>() / mb as f32;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f32>() / mb as f32;
    let std = var.sqrt() + 1e-8;
    for a in &mut adv {
        *a = (*a - mean) / std;
    }

    let mut t = Tape::<f32>::new();
    let p_actor = t.param(1, actor.len(), actor.clone());
    let p_critic = t.param(1, critic.len(), critic.clone());
    let x = t.constant(mb, obs_dim, obs);
    let head = t.mlp(actor_spec, p_actor, x);

    let (logp_new, entropy, p_log_std) = if discrete {
        let ls = t.log_softmax(head);
        let mut mask = vec![0.0f32; mb * n_actions];
        for (r, &i) in idx.iter().enumerate() {
            mask[r * n_actions + flat_dact[i]] = 1.0;
        }
        let mask = t.constant(mb, n_actions, mask);
        let picked = t.mul(ls, mask);
        let logp_new = t.row_sum(picked);
        let probs = t.softmax(head);
        let plogp = t.mul(probs, ls);
        let negent = t.row_sum(plogp);
        let negent_mean = t.mean_all(negent);
        let entropy = t.neg(negent_mean);
        (logp_new, entropy, None)
    } else {
        let p_ls = t.param(1, act_dim, log_std.clone());
        let ls_rows = t.repeat_rows(p_ls, mb);
        let mut act = Vec::with_capacity(mb * act_dim);
        for &i in idx {
            act.extend_from_slice(&flat_cact[i * act_dim..(i + 1) * act_dim]);
        }
        let a = t.constant(mb, act_dim, act);
        let logp = t.gaussian_log_density(a, head, ls_rows);
        // Gaussian entropy: sum_j (log_std_j + 0.5 ln(2 pi e)), state-independent
        let ls_sum = t.sum_all(p_ls);
        let entropy = t.add_const(ls_sum, act_dim as f32 * HALF_LOG_2PI_E);
        (logp, entropy, Some(p_ls))
    };

    let old = t.constant(mb, 1, old_logp);
    let diff = t.sub(logp_new, old);
    let ratio = t.exp(diff);
    let adv_c = t.constant(mb, 1, adv);
    let surr1 = t.mul(ratio, adv_c);
    let clipped = t.clip(ratio, 1.0 - hp.clip_eps, 1.0 + hp.clip_eps);
    let surr2 = t.mul(clipped, adv_c);
    let surr = t.min(surr1, surr2);
    let surr_mean = t.mean_all(surr);
    let policy_loss = t.neg(surr_mean);

    let v = t.mlp(critic_spec, p_critic, x);
    let ret_c = t.constant(mb, 1, ret);
    let verr = t.sub(v, ret_c);
    let vsq = t.square(verr);
    let vmean = t.mean_all(vsq);
    let value_loss = t.scale(vmean, 0.5 * hp.value_coef);

    let ent_term = t.scale(entropy, -hp.entropy_coef);
    let pv = t.add(policy_loss, value_loss);
    let loss = t.add(pv, ent_term);
    let loss_value = t.scalar_value(loss);

    let mut grads = t.backward(loss)?;
    let mut g_actor = grads.take(p_actor).unwrap_or_else(|| vec![0.0; actor.len()]);
    let mut g_critic = grads.take(p_critic).unwrap_or_else(|| vec![0.0; critic.len()]);
    let mut g_ls = p_log_std
        .and_then(|p| grads.take(p))
        .unwrap_or_else(|| vec![0.0; act_dim]);

    if let Some(max) = hp.max_grad_norm {
        joint_clip(&mut [&mut g_actor, &mut g_critic, &mut g_ls], max);
    }
    opt_actor.step(actor, &g_actor);
    opt_critic.step(critic, &g_critic);
    if !discrete {
        opt_log_std.step(log_std, &g_ls);
    }
    Ok(loss_value)
}

/// Global-norm clip across several gradient groups.
fn joint_clip(groups: &mut [&mut Vec<f32>], max_norm: f32) {
    let norm: f32 = groups
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f32>())
        .sum::<f32>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in groups.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
}

/// Samples from a categorical given logits; returns (action, log-prob).
fn sample_categorical(logits: &[f32], rng: &mut Rng) -> (usize, f32) {
    let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f32 = exps.iter().sum();
    let mut u = rng.uniform_f32() * total;
    let mut pick = exps.len() - 1;
    for (i, e) in exps.iter().enumerate() {
        if u < *e {
            pick = i;
            break;
        }
        u -= e;
    }
    (pick, (exps[pick] / total).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ClassicEnv, EnvId};

    #[test]
    fn step_accounting_is_exact() {
        let env = ClassicEnv::new(EnvId::CartPoleV1);
        let mut rng = Rng::new(0);
        let mut task = super::super::task_for(EnvId::CartPoleV1, super::super::AlgoId::Ppo, &mut rng, true);
        task.total_steps = 1_000;
        let run = train(&task, &env, &mut rng, None).unwrap();
        assert_eq!(run.log.steps_consumed, 1_000);
        assert_eq!(run.log.step_deficit, 0);

        // a budget that does not divide the rollout size rounds down
        task.total_steps = 1_234;
        let run = train(&task, &env, &mut Rng::new(1), None).unwrap();
        assert_eq!(run.log.steps_consumed, 1_000);
        assert_eq!(run.log.step_deficit, 234);
    }

    #[test]
    fn clip_surrogate_inactive_inside_trust_region() {
        // On a grid of (ratio, advantage) pairs, the clipped objective must
        // equal the unclipped one whenever the ratio is inside [1-eps, 1+eps],
        // and also when clamping would help the objective (sign agreement).
        let eps = 0.2f32;
        for ratio in [0.5f32, 0.81, 0.9, 1.0, 1.1, 1.19, 1.4, 2.0] {
            for advantage in [-2.0f32, -0.5, 0.5, 2.0] {
                let mut t = Tape::<f32>::new();
                let r = t.constant(1, 1, vec![ratio]);
                let a = t.constant(1, 1, vec![advantage]);
                let s1 = t.mul(r, a);
                let c = t.clip(r, 1.0 - eps, 1.0 + eps);
                let s2 = t.mul(c, a);
                let m = t.min(s1, s2);
                let got = t.scalar_value(m);
                let unclipped = ratio * advantage;
                if (ratio - 1.0).abs() <= eps {
                    assert_eq!(got, unclipped, "inside the trust region clipping is a no-op");
                } else {
                    let clamped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
                    assert_eq!(got, unclipped.min(clamped));
                }
            }
        }
    }

    #[test]
    fn determinism_same_seed_same_params() {
        let env = ClassicEnv::new(EnvId::CartPoleV1);
        let mut task =
            super::super::task_for(EnvId::CartPoleV1, super::super::AlgoId::Ppo, &mut Rng::new(5), true);
        task.total_steps = 1_000;
        let a = train(&task, &env, &mut Rng::new(7), None).unwrap();
        let b = train(&task, &env, &mut Rng::new(7), None).unwrap();
        assert_eq!(a.policy.params, b.policy.params);
    }
}
