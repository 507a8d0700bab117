//! The synthetic environment family: contextual bandits (initial-state
//! parameterization) and the ablation variants with transition networks.
//!
//! A CB-mode environment draws a latent `z`, produces the observation
//! `s_0 = f_phi(z)` with the initial-state network, pays
//! `r = f_theta(s_0 ++ enc(a))` with the reward network, and terminates.
//! T/TI modes instead run a transition network `s', r, d = f_theta(s ++ enc(a))`
//! up to an episode-length cap; T samples initial states from the evaluation
//! environment, TI from the learned generator.
//!
//! Synthetic observations are not clipped to the evaluation environment's
//! box: the learned state distribution may legitimately cover a larger
//! region.

use serde::{Deserialize, Serialize};

use crate::envs::{Action, ActionSpace, ClassicEnv, Env, EnvId, EnvState};
use crate::nn::{self, Activation, NetworkSpec, ParamVector};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentDist {
    Gaussian,
    Uniform01,
    CategoricalUniform,
    CategoricalSoftmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScbMode {
    /// Contextual bandit: initial-state + reward networks, episode length 1.
    Cb,
    /// Transition network only; initial states come from the EE.
    T,
    /// Transition network plus learned initial-state network.
    Ti,
}

/// Architecture description of a synthetic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScbSpec {
    pub env_id: EnvId,
    pub latent_dim: usize,
    pub latent_dist: LatentDist,
    pub mode: ScbMode,
    pub max_episode_len: usize,
    /// Latent -> observation generator; absent in T mode.
    pub init_net: Option<NetworkSpec>,
    /// CB: reward net `obs ++ enc(a) -> 1`. T/TI: transition net
    /// `obs ++ enc(a) -> obs_dim + 2` (next obs, reward, done logit).
    pub net: NetworkSpec,
}

impl ScbSpec {
    /// Standard contextual bandit: one hidden layer of 32 tanh units for both
    /// networks, Gaussian latent of the EE's observation dimensionality.
    pub fn cb(env_id: EnvId) -> Self {
        let obs = env_id.obs_dim();
        let enc = env_id.action_space().encoding_dim();
        ScbSpec {
            env_id,
            latent_dim: obs,
            latent_dist: LatentDist::Gaussian,
            mode: ScbMode::Cb,
            max_episode_len: 1,
            init_net: Some(NetworkSpec::new(obs, &[32], obs, Activation::Tanh)),
            net: NetworkSpec::new(obs + enc, &[32], 1, Activation::Tanh),
        }
    }

    /// Transition-network variant (T when `with_init` is false, TI otherwise).
    pub fn transition(env_id: EnvId, with_init: bool, max_episode_len: usize) -> Self {
        let obs = env_id.obs_dim();
        let enc = env_id.action_space().encoding_dim();
        ScbSpec {
            env_id,
            latent_dim: obs,
            latent_dist: LatentDist::Gaussian,
            mode: if with_init { ScbMode::Ti } else { ScbMode::T },
            max_episode_len,
            init_net: with_init.then(|| NetworkSpec::new(obs, &[32], obs, Activation::Tanh)),
            net: NetworkSpec::new(obs + enc, &[32], obs + 2, Activation::Tanh),
        }
    }

    pub fn with_latent(mut self, dist: LatentDist) -> Self {
        self.latent_dist = dist;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let obs = self.env_id.obs_dim();
        let enc = self.env_id.action_space().encoding_dim();
        if self.max_episode_len < 1 {
            return Err(Error::Contract("max_episode_len must be at least 1".into()));
        }
        match self.mode {
            ScbMode::Cb => {
                if self.max_episode_len != 1 {
                    return Err(Error::Contract("CB mode requires max_episode_len == 1".into()));
                }
                if self.init_net.is_none() {
                    return Err(Error::Contract("CB mode requires an initial-state net".into()));
                }
                if self.net.output_dim != 1 {
                    return Err(Error::Contract("CB reward net must output a scalar".into()));
                }
            }
            ScbMode::T | ScbMode::Ti => {
                if self.net.output_dim != obs + 2 {
                    return Err(Error::Contract(
                        "transition net must output obs + reward + done logit".into(),
                    ));
                }
                if self.mode == ScbMode::T && self.init_net.is_some() {
                    return Err(Error::Contract("T mode uses the EE initial states".into()));
                }
                if self.mode == ScbMode::Ti && self.init_net.is_none() {
                    return Err(Error::Contract("TI mode requires an initial-state net".into()));
                }
            }
        }
        if let Some(init) = &self.init_net {
            if init.input_dim != self.latent_dim || init.output_dim != obs {
                return Err(Error::Contract("init net must map latent -> obs".into()));
            }
        }
        if self.net.input_dim != obs + enc {
            return Err(Error::Contract("net input must be obs ++ action encoding".into()));
        }
        Ok(())
    }

    pub fn init_param_count(&self) -> usize {
        self.init_net.as_ref().map_or(0, |n| n.param_count())
    }

    /// Total genome length: `phi` then `theta`.
    pub fn genome_len(&self) -> usize {
        self.init_param_count() + self.net.param_count()
    }
}

/// Parameters of a synthetic environment: the initial-state generator `phi`
/// and the reward/transition network `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScbParams {
    pub init_params: ParamVector,
    pub net_params: ParamVector,
}

impl ScbParams {
    /// Splits a flat SNES genome laid out as `[phi || theta]`.
    pub fn from_genome(spec: &ScbSpec, genome: &ParamVector) -> Result<Self> {
        if genome.len() != spec.genome_len() {
            return Err(Error::Contract(format!(
                "genome length {} != spec {}",
                genome.len(),
                spec.genome_len()
            )));
        }
        let split = spec.init_param_count();
        Ok(ScbParams {
            init_params: ParamVector(genome.0[..split].to_vec()),
            net_params: ParamVector(genome.0[split..].to_vec()),
        })
    }

    /// Concatenates back to the fixed `[phi || theta]` genome layout.
    pub fn to_genome(&self) -> ParamVector {
        let mut v = Vec::with_capacity(self.init_params.len() + self.net_params.len());
        v.extend_from_slice(self.init_params.as_slice());
        v.extend_from_slice(self.net_params.as_slice());
        ParamVector(v)
    }

    pub fn init_random(spec: &ScbSpec, rng: &mut Rng) -> Self {
        ScbParams {
            init_params: spec
                .init_net
                .as_ref()
                .map_or_else(|| ParamVector(Vec::new()), |n| nn::init_params(n, rng)),
            net_params: nn::init_params(&spec.net, rng),
        }
    }
}

/// Encodes an action for network input: one-hot for discrete spaces,
/// box-clipped passthrough for continuous ones.
pub fn action_encoding(space: &ActionSpace, action: &Action) -> Vec<f32> {
    match (space, action) {
        (ActionSpace::Discrete(n), Action::Discrete(a)) => {
            let mut v = vec![0.0; *n];
            v[*a] = 1.0;
            v
        }
        (ActionSpace::Box { low, high }, Action::Continuous(vals)) => vals
            .iter()
            .zip(low.iter().zip(high))
            .map(|(x, (l, h))| x.clamp(*l, *h))
            .collect(),
        _ => panic!("action does not match space"),
    }
}

/// Draws one latent vector.
pub fn sample_latent(dist: LatentDist, dim: usize, rng: &mut Rng) -> Vec<f32> {
    match dist {
        LatentDist::Gaussian => (0..dim).map(|_| rng.normal_f32()).collect(),
        LatentDist::Uniform01 => (0..dim).map(|_| rng.uniform_f32()).collect(),
        LatentDist::CategoricalUniform => {
            let mut v = vec![0.0; dim];
            v[rng.index(dim)] = 1.0;
            v
        }
        LatentDist::CategoricalSoftmax => {
            // probabilities softmax([1, 2, ..., n])
            let mut v = vec![0.0; dim];
            let weights: Vec<f64> = (1..=dim).map(|i| (i as f64).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.uniform_f32() as f64 * total;
            let mut k = dim - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    k = i;
                    break;
                }
                u -= w;
            }
            v[k] = 1.0;
            v
        }
    }
}

/// A synthetic environment instance. Pure over `(spec, params)`; population
/// members are evaluated concurrently without coordination.
#[derive(Debug, Clone)]
pub struct Scb {
    spec: ScbSpec,
    params: ScbParams,
    /// EE used for T-mode initial states.
    ee: ClassicEnv,
}

impl Scb {
    pub fn new(spec: ScbSpec, params: ScbParams) -> Result<Self> {
        spec.validate()?;
        if params.init_params.len() != spec.init_param_count()
            || params.net_params.len() != spec.net.param_count()
        {
            return Err(Error::Contract("SCB parameter lengths do not match spec".into()));
        }
        let ee = ClassicEnv::new(spec.env_id);
        Ok(Scb { spec, params, ee })
    }

    pub fn from_genome(spec: ScbSpec, genome: &ParamVector) -> Result<Self> {
        let params = ScbParams::from_genome(&spec, genome)?;
        Scb::new(spec, params)
    }

    pub fn spec(&self) -> &ScbSpec {
        &self.spec
    }

    pub fn params(&self) -> &ScbParams {
        &self.params
    }

    /// Reward of `(obs, action)` under the CB reward network (also usable on
    /// T/TI transition nets, where it returns the reward head).
    pub fn reward(&self, obs: &[f32], action: &Action) -> f32 {
        let enc = action_encoding(&self.spec.env_id.action_space(), action);
        let mut input = Vec::with_capacity(obs.len() + enc.len());
        input.extend_from_slice(obs);
        input.extend_from_slice(&enc);
        let out = nn::forward(&self.spec.net, &self.params.net_params, &input)
            .expect("SCB net dims validated at construction");
        match self.spec.mode {
            ScbMode::Cb => out[0],
            _ => out[self.spec.env_id.obs_dim()],
        }
    }
}

impl Env for Scb {
    fn obs_dim(&self) -> usize {
        self.spec.env_id.obs_dim()
    }

    fn action_space(&self) -> ActionSpace {
        self.spec.env_id.action_space()
    }

    fn horizon(&self) -> usize {
        self.spec.max_episode_len
    }

    fn reset(&self, rng: &mut Rng) -> EnvState {
        let obs = match &self.spec.init_net {
            Some(init) => {
                let z = sample_latent(self.spec.latent_dist, self.spec.latent_dim, rng);
                nn::forward(init, &self.params.init_params, &z)
                    .expect("init net dims validated at construction")
            }
            None => self.ee.reset(rng).obs,
        };
        EnvState { obs, t: 0, done: false, truncated: false, internal: Vec::new() }
    }

    fn step(&self, state: &EnvState, action: &Action) -> Result<(EnvState, f32)> {
        if state.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        if !self.action_space().contains(action) {
            return Err(Error::Contract(format!(
                "action {action:?} outside space {:?}",
                self.action_space()
            )));
        }
        let enc = action_encoding(&self.spec.env_id.action_space(), action);
        let mut input = Vec::with_capacity(state.obs.len() + enc.len());
        input.extend_from_slice(&state.obs);
        input.extend_from_slice(&enc);
        let out = nn::forward(&self.spec.net, &self.params.net_params, &input)?;
        let t = state.t + 1;
        match self.spec.mode {
            ScbMode::Cb => {
                // Every CB transition points at the terminal state.
                let reward = out[0];
                Ok((
                    EnvState {
                        obs: state.obs.clone(),
                        t,
                        done: true,
                        truncated: false,
                        internal: Vec::new(),
                    },
                    reward,
                ))
            }
            ScbMode::T | ScbMode::Ti => {
                let obs_dim = self.spec.env_id.obs_dim();
                let next_obs = out[..obs_dim].to_vec();
                let mut reward = out[obs_dim];
                let done_logit = out[obs_dim + 1];
                // Overflowing state values become a NaN-fitness signal rather
                // than a crash.
                let finite = reward.is_finite() && next_obs.iter().all(|v| v.is_finite());
                if !finite {
                    reward = f32::NAN;
                }
                let done = !finite || done_logit > 0.0 || t >= self.spec.max_episode_len;
                Ok((
                    EnvState { obs: next_obs, t, done, truncated: false, internal: Vec::new() },
                    reward,
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::rollout;

    fn cartpole_cb(seed: u64) -> Scb {
        let spec = ScbSpec::cb(EnvId::CartPoleV1);
        let mut rng = Rng::new(seed);
        let params = ScbParams::init_random(&spec, &mut rng);
        Scb::new(spec, params).unwrap()
    }

    #[test]
    fn zero_init_net_gives_zero_obs() {
        let spec = ScbSpec::cb(EnvId::CartPoleV1);
        let params = ScbParams {
            init_params: ParamVector::zeros(spec.init_param_count()),
            net_params: ParamVector::zeros(spec.net.param_count()),
        };
        let scb = Scb::new(spec, params).unwrap();
        let mut rng = Rng::new(0);
        for _ in 0..10 {
            let s = scb.reset(&mut rng);
            assert!(s.obs.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn reset_matches_hand_forward() {
        let scb = cartpole_cb(1);
        let mut rng = Rng::new(77);
        // Re-derive the same latent from an identical stream, then check the
        // observation equals the reference forward pass.
        let mut probe = Rng::new(77);
        let z = sample_latent(LatentDist::Gaussian, 4, &mut probe);
        let s = scb.reset(&mut rng);
        let expect =
            nn::forward(scb.spec().init_net.as_ref().unwrap(), &scb.params().init_params, &z)
                .unwrap();
        assert_eq!(s.obs, expect);
    }

    #[test]
    fn categorical_latent_yields_finite_observation_set() {
        let spec = ScbSpec::cb(EnvId::CartPoleV1).with_latent(LatentDist::CategoricalUniform);
        let mut rng = Rng::new(3);
        let params = ScbParams::init_random(&spec, &mut rng);
        let scb = Scb::new(spec, params).unwrap();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..500 {
            let s = scb.reset(&mut rng);
            seen.insert(s.obs.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        // one-hot latent dimension 4 -> at most 4 distinct observations
        assert!(seen.len() <= 4, "got {} distinct observations", seen.len());
    }

    #[test]
    fn cb_episodes_have_length_one() {
        let scb = cartpole_cb(2);
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let s = scb.reset(&mut rng);
            let (next, _) = scb.step(&s, &Action::Discrete(rng.index(2))).unwrap();
            assert!(next.done, "CB transitions always terminate");
            assert!(scb.step(&next, &Action::Discrete(0)).is_err());
        }
    }

    #[test]
    fn cb_return_equals_immediate_reward() {
        let scb = cartpole_cb(4);
        let outer = Rng::new(9);
        for k in 0..100u64 {
            let mut rng = outer.child(k);
            let mut rng2 = outer.child(k);
            let ret = rollout(&scb, &mut |_| Action::Discrete(0), 10, &mut rng);
            let s = scb.reset(&mut rng2);
            let (_, r) = scb.step(&s, &Action::Discrete(0)).unwrap();
            assert_eq!(ret, r, "episodic return must equal the single-step reward");
        }
    }

    #[test]
    fn zero_reward_net_pays_zero() {
        let spec = ScbSpec::cb(EnvId::PendulumV1);
        let mut rng = Rng::new(6);
        let params = ScbParams {
            init_params: nn::init_params(spec.init_net.as_ref().unwrap(), &mut rng),
            net_params: ParamVector::zeros(spec.net.param_count()),
        };
        let scb = Scb::new(spec, params).unwrap();
        for _ in 0..20 {
            let s = scb.reset(&mut rng);
            let (_, r) = scb.step(&s, &Action::Continuous(vec![0.7])).unwrap();
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn action_encodings() {
        assert_eq!(
            action_encoding(&ActionSpace::Discrete(2), &Action::Discrete(1)),
            vec![0.0, 1.0]
        );
        assert_eq!(
            action_encoding(&ActionSpace::Discrete(3), &Action::Discrete(2)),
            vec![0.0, 0.0, 1.0]
        );
        assert_eq!(
            action_encoding(
                &ActionSpace::Box { low: vec![-2.0], high: vec![2.0] },
                &Action::Continuous(vec![1.5])
            ),
            vec![1.5]
        );
        // out-of-box values clip
        assert_eq!(
            action_encoding(
                &ActionSpace::Box { low: vec![-1.0], high: vec![1.0] },
                &Action::Continuous(vec![7.0])
            ),
            vec![1.0]
        );
    }

    #[test]
    fn transition_mode_respects_episode_cap() {
        let spec = ScbSpec::transition(EnvId::CartPoleV1, true, 5);
        let mut rng = Rng::new(11);
        // Zero transition net: done logit 0 never fires, cap must end episodes.
        let params = ScbParams {
            init_params: nn::init_params(spec.init_net.as_ref().unwrap(), &mut rng),
            net_params: ParamVector::zeros(spec.net.param_count()),
        };
        let scb = Scb::new(spec, params).unwrap();
        for _ in 0..20 {
            let mut s = scb.reset(&mut rng);
            let mut len = 0;
            loop {
                let (next, _) = scb.step(&s, &Action::Discrete(0)).unwrap();
                len += 1;
                s = next;
                if s.done || s.truncated {
                    break;
                }
                assert!(len <= 5, "episode exceeded the cap");
            }
            assert_eq!(len, 5);
        }
    }

    #[test]
    fn t_mode_uses_ee_initial_states() {
        let spec = ScbSpec::transition(EnvId::MountainCarV0, false, 10);
        let mut rng = Rng::new(12);
        let params = ScbParams::init_random(&spec, &mut rng);
        let scb = Scb::new(spec, params).unwrap();
        for _ in 0..100 {
            let s = scb.reset(&mut rng);
            assert!((-0.6..=-0.4).contains(&s.obs[0]), "EE initial position");
            assert_eq!(s.obs[1], 0.0);
        }
    }

    #[test]
    fn non_finite_transition_signals_nan() {
        let spec = ScbSpec::transition(EnvId::CartPoleV1, true, 50);
        let mut rng = Rng::new(13);
        let mut params = ScbParams::init_random(&spec, &mut rng);
        // Blow up the output layer bias of the reward head.
        let n = params.net_params.len();
        params.net_params.0[n - 2] = f32::INFINITY;
        let scb = Scb::new(spec, params).unwrap();
        let s = scb.reset(&mut rng);
        let (next, r) = scb.step(&s, &Action::Discrete(0)).unwrap();
        assert!(r.is_nan(), "overflow must surface as NaN reward, not a crash");
        assert!(next.done);
    }

    #[test]
    fn genome_round_trip() {
        let spec = ScbSpec::cb(EnvId::AcrobotV1);
        let mut rng = Rng::new(14);
        let params = ScbParams::init_random(&spec, &mut rng);
        let genome = params.to_genome();
        assert_eq!(genome.len(), spec.genome_len());
        let back = ScbParams::from_genome(&spec, &genome).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = ScbSpec::cb(EnvId::CartPoleV1);
        spec.max_episode_len = 3;
        assert!(spec.validate().is_err(), "CB must have episode length 1");
        let mut spec = ScbSpec::transition(EnvId::CartPoleV1, false, 10);
        spec.init_net = Some(NetworkSpec::new(4, &[32], 4, Activation::Tanh));
        assert!(spec.validate().is_err(), "T mode must not carry an init net");
    }
}
