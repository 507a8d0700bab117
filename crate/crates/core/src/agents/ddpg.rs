//! DDPG and TD3 for continuous action spaces. TD3 layers twin critics with
//! min targets, target-policy smoothing, and delayed actor updates on top of
//! the DDPG skeleton.

use super::{optim, AlgoId, EnvBank, EvalHook, InnerTask, Replay, TrainLog, TrainRun, TrainedPolicy};
use crate::envs::{Action, ActionSpace, Env};
use crate::nn::{self, NetworkSpec};
use crate::tape::Tape;
use crate::{Error, Result, Rng};

pub(super) fn train(
    task: &InnerTask,
    env: &dyn Env,
    rng: &mut Rng,
    mut hook: Option<EvalHook<'_>>,
) -> Result<TrainRun> {
    let hp = &task.hp;
    let td3 = task.algo == AlgoId::Td3;
    let obs_dim = env.obs_dim();
    let space = env.action_space();
    let (low, high) = match &space {
        ActionSpace::Box { low, high } => (low.clone(), high.clone()),
        _ => return Err(Error::Config("DDPG/TD3 require a box action space".into())),
    };
    let k = low.len();
    let scale: Vec<f32> = low.iter().zip(&high).map(|(l, h)| 0.5 * (h - l)).collect();
    let center: Vec<f32> = low.iter().zip(&high).map(|(l, h)| 0.5 * (h + l)).collect();

    let actor_spec = task.net.clone();
    let critic_spec = NetworkSpec::new(obs_dim + k, &task.net.hidden, 1, task.net.activation);
    let mut actor = nn::init_params(&actor_spec, rng);
    let mut q1 = nn::init_params(&critic_spec, rng);
    let mut q2 = nn::init_params(&critic_spec, rng); // unused by plain DDPG
    let mut actor_target = actor.clone();
    let mut t1 = q1.clone();
    let mut t2 = q2.clone();

    let mut opt_actor = optim::Adam::new(hp.learning_rate, actor.len());
    let mut opt_q1 = optim::Adam::new(hp.learning_rate, q1.len());
    let mut opt_q2 = optim::Adam::new(hp.learning_rate, q2.len());

    let mut buffer = Replay::new(hp.buffer_size, obs_dim, k);
    let mut bank = EnvBank::new(env, hp.num_envs, rng.child(0));
    let mut act_rng = rng.child(1);
    let mut sample_rng = rng.child(2);

    let mut log = TrainLog { steps_consumed: task.total_steps, ..TrainLog::default() };
    let mut step = 0usize;
    let mut updates = 0usize;

    let actor_action = |params: &[f32], obs: &[f32]| -> Vec<f32> {
        let head = super::forward_batch(&actor_spec, params, obs, 1);
        (0..k).map(|j| head[j].tanh() * scale[j] + center[j]).collect()
    };

    while step < task.total_steps {
        for e in 0..hp.num_envs {
            if step >= task.total_steps {
                break;
            }
            let obs = bank.obs(e).to_vec();
            let action: Vec<f32> = if buffer.len() < hp.prefill {
                (0..k).map(|j| act_rng.uniform_in(low[j], high[j])).collect()
            } else {
                let mut a = actor_action(actor.as_slice(), &obs);
                for j in 0..k {
                    a[j] = (a[j] + act_rng.normal_f32() * hp.expl_noise * scale[j])
                        .clamp(low[j], high[j]);
                }
                a
            };
            let (next, reward, finished) = bank.step(e, &Action::Continuous(action.clone()))?;
            if reward.is_nan() {
                return Err(Error::Numerical("NaN reward during DDPG/TD3 rollout".into()));
            }
            buffer.push_continuous(&obs, &action, reward, &next.obs, next.done);
            step += 1;
            if let Some(ret) = finished {
                log.episodes.push((step, ret));
            }
            if let Some((every, f)) = hook.as_mut() {
                if step % *every == 0 {
                    f(step, &TrainedPolicy::tanh_squash(actor_spec.clone(), actor.clone(), &space));
                }
            }
        }
        if buffer.len() < hp.prefill {
            continue;
        }

        for _ in 0..hp.grad_steps {
            let idx = buffer.sample_indices(hp.batch_size, &mut sample_rng);
            let b = idx.len();

            // --- targets ---
            let next_obs = buffer.gather_next_obs(&idx);
            let next_heads =
                super::forward_batch(&actor_spec, actor_target.as_slice(), &next_obs, b);
            let mut next_inputs = Vec::with_capacity(b * (obs_dim + k));
            for r in 0..b {
                next_inputs.extend_from_slice(&next_obs[r * obs_dim..(r + 1) * obs_dim]);
                for j in 0..k {
                    let mut a = next_heads[r * k + j].tanh() * scale[j] + center[j];
                    if td3 {
                        // clipped target-policy smoothing noise in env units
                        let noise = (sample_rng.normal_f32() * hp.target_noise * scale[j]).clamp(
                            -hp.target_noise_clip * scale[j],
                            hp.target_noise_clip * scale[j],
                        );
                        a = (a + noise).clamp(low[j], high[j]);
                    }
                    next_inputs.push(a);
                }
            }
            let tq1 = super::forward_batch(&critic_spec, t1.as_slice(), &next_inputs, b);
            let boot: Vec<f32> = if td3 {
                let tq2 = super::forward_batch(&critic_spec, t2.as_slice(), &next_inputs, b);
                tq1.iter().zip(&tq2).map(|(a, c)| a.min(*c)).collect()
            } else {
                tq1
            };
            let mut targets = Vec::with_capacity(b);
            for (r, &i) in idx.iter().enumerate() {
                let nonterminal = if buffer.terminated_at(i) { 0.0 } else { 1.0 };
                targets.push(buffer.reward_at(i) + hp.discount * nonterminal * boot[r]);
            }

            // --- critic update ---
            let obs_batch = buffer.gather_obs(&idx);
            let act_batch = buffer.gather_continuous_actions(&idx);
            let mut t = Tape::<f32>::new();
            let p1 = t.param(1, q1.len(), q1.0.clone());
            let p2 = if td3 { Some(t.param(1, q2.len(), q2.0.clone())) } else { None };
            let xo = t.constant(b, obs_dim, obs_batch.clone());
            let xa = t.constant(b, k, act_batch);
            let xin = t.concat_cols(xo, xa);
            let y = t.constant(b, 1, targets);
            let q1v = t.mlp(&critic_spec, p1, xin);
            let e1 = t.sub(q1v, y);
            let s1 = t.square(e1);
            let mut closs = t.mean_all(s1);
            if let Some(p2) = p2 {
                let q2v = t.mlp(&critic_spec, p2, xin);
                let e2 = t.sub(q2v, y);
                let s2 = t.square(e2);
                let m2 = t.mean_all(s2);
                closs = t.add(closs, m2);
            }
            let closs_value = t.scalar_value(closs);
            if !closs_value.is_finite() {
                return Err(Error::Numerical("NaN/inf critic loss".into()));
            }
            let mut grads = t.backward(closs)?;
            let mut g1 = grads.take(p1).unwrap();
            if let Some(max) = hp.max_grad_norm {
                optim::clip_global_norm(&mut g1, max);
            }
            opt_q1.step(&mut q1.0, &g1);
            if let Some(p2) = p2 {
                let mut g2 = grads.take(p2).unwrap();
                if let Some(max) = hp.max_grad_norm {
                    optim::clip_global_norm(&mut g2, max);
                }
                opt_q2.step(&mut q2.0, &g2);
            }
            updates += 1;

            // --- delayed actor and target updates ---
            let delay = if td3 { hp.policy_delay } else { 1 };
            if updates % delay == 0 {
                let mut t = Tape::<f32>::new();
                let pa = t.param(1, actor.len(), actor.0.clone());
                let cq = t.constant(1, q1.len(), q1.0.clone());
                let xo = t.constant(b, obs_dim, obs_batch);
                let head = t.mlp(&actor_spec, pa, xo);
                let a = t.tanh(head);
                let scale_c = t.constant(1, k, scale.clone());
                let scale_rows = t.repeat_rows(scale_c, b);
                let center_c = t.constant(1, k, center.clone());
                let center_rows = t.repeat_rows(center_c, b);
                let a_scaled = t.mul(a, scale_rows);
                let a_env = t.add(a_scaled, center_rows);
                let xin = t.concat_cols(xo, a_env);
                let qv = t.mlp(&critic_spec, cq, xin);
                let qmean = t.mean_all(qv);
                let aloss = t.neg(qmean);
                let aloss_value = t.scalar_value(aloss);
                if !aloss_value.is_finite() {
                    return Err(Error::Numerical("NaN/inf actor loss".into()));
                }
                let mut grads = t.backward(aloss)?;
                let mut ga = grads.take(pa).unwrap();
                if let Some(max) = hp.max_grad_norm {
                    optim::clip_global_norm(&mut ga, max);
                }
                opt_actor.step(&mut actor.0, &ga);

                optim::polyak_update(&mut actor_target.0, &actor.0, hp.polyak_tau);
                optim::polyak_update(&mut t1.0, &q1.0, hp.polyak_tau);
                if td3 {
                    optim::polyak_update(&mut t2.0, &q2.0, hp.polyak_tau);
                }
            }
            if log.losses.last().map_or(true, |(s, _)| step > *s) {
                log.losses.push((step, closs_value));
            }
        }
    }
    if !actor.all_finite() || !q1.all_finite() {
        return Err(Error::Numerical("NaN DDPG/TD3 parameters".into()));
    }
    Ok(TrainRun { policy: TrainedPolicy::tanh_squash(actor_spec, actor, &space), log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvId, EnvState};

    /// One-step bandit with reward -(a - 0.5)^2: both DDPG and TD3 must move
    /// their deterministic policy near the optimum.
    struct TargetBandit;
    impl Env for TargetBandit {
        fn obs_dim(&self) -> usize {
            2
        }
        fn action_space(&self) -> ActionSpace {
            ActionSpace::Box { low: vec![-1.0], high: vec![1.0] }
        }
        fn horizon(&self) -> usize {
            1
        }
        fn reset(&self, rng: &mut Rng) -> EnvState {
            EnvState {
                obs: vec![rng.normal_f32(), rng.normal_f32()],
                t: 0,
                done: false,
                truncated: false,
                internal: Vec::new(),
            }
        }
        fn step(&self, state: &EnvState, action: &Action) -> Result<(EnvState, f32)> {
            let a = match action {
                Action::Continuous(v) => v[0],
                _ => unreachable!(),
            };
            Ok((
                EnvState {
                    obs: state.obs.clone(),
                    t: 1,
                    done: true,
                    truncated: false,
                    internal: Vec::new(),
                },
                -(a - 0.5) * (a - 0.5),
            ))
        }
    }

    #[test]
    fn ddpg_and_td3_find_the_bandit_optimum() {
        for algo in [AlgoId::Ddpg, AlgoId::Td3] {
            let env = TargetBandit;
            let mut rng = Rng::new(20);
            let mut task =
                super::super::task_for(EnvId::MountainCarContinuousV0, algo, &mut rng, true);
            task.net = NetworkSpec::new(2, &[64, 64], 1, task.net.activation);
            task.total_steps = 5_000;
            let run = train(&task, &env, &mut Rng::new(6), None).unwrap();
            let mut probe = Rng::new(7);
            let mut worst: f32 = 0.0;
            for _ in 0..20 {
                let s = env.reset(&mut probe);
                if let Action::Continuous(v) = run.policy.act(&s.obs) {
                    worst = worst.max((v[0] - 0.5).abs());
                }
            }
            assert!(worst < 0.2, "{algo:?} policy off the optimum by {worst}");
        }
    }
}
