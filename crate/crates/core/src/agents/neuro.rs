//! Neuroevolution of a policy network: the gradient-free out-of-distribution
//! agent. SNES searches policy weights directly; fitness is the mean
//! episodic return over a handful of rollouts.

use super::TrainedPolicy;
use crate::envs::{ActionSpace, Env};
use crate::nn::NetworkSpec;
use crate::snes;
use crate::{Result, Rng};

/// Rollouts averaged per fitness evaluation.
const FITNESS_ROLLOUTS: usize = 4;

pub fn neuroevolve_policy(
    env: &dyn Env,
    net: &NetworkSpec,
    generations: usize,
    popsize: usize,
    rng: &Rng,
) -> Result<TrainedPolicy> {
    let space = env.action_space();
    let discrete = matches!(space, ActionSpace::Discrete(_));
    let dim = net.param_count();

    let objective = |z: &crate::nn::ParamVector, member_rng: &mut Rng| -> f32 {
        let policy = if discrete {
            TrainedPolicy::argmax(net.clone(), z.clone(), &space)
        } else {
            TrainedPolicy::tanh_squash(net.clone(), z.clone(), &space)
        };
        let mut total = 0.0f32;
        for r in 0..FITNESS_ROLLOUTS {
            let mut stream = member_rng.child(r as u64);
            let ret = crate::envs::rollout(
                env,
                &mut |obs| policy.act(obs),
                env.horizon(),
                &mut stream,
            );
            if ret.is_nan() {
                return f32::NAN;
            }
            total += ret;
        }
        total / FITNESS_ROLLOUTS as f32
    };

    let result = snes::optimize(objective, vec![0.0; dim], 0.05, popsize, generations, rng);
    let params = result.best;
    Ok(if discrete {
        TrainedPolicy::argmax(net.clone(), params, &space)
    } else {
        TrainedPolicy::tanh_squash(net.clone(), params, &space)
    })
}
