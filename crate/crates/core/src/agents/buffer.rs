//! Fixed-capacity replay buffer for the off-policy algorithms.

use crate::Rng;

/// Ring buffer of transitions with flat storage. Discrete and continuous
/// actions use separate columns so sampling stays allocation-light.
pub struct Replay {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    len: usize,
    pos: usize,
    obs: Vec<f32>,
    next_obs: Vec<f32>,
    discrete_actions: Vec<usize>,
    continuous_actions: Vec<f32>,
    rewards: Vec<f32>,
    /// Termination flags; truncation stores `false` so targets bootstrap.
    terminations: Vec<bool>,
}

impl Replay {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        Replay {
            capacity,
            obs_dim,
            act_dim,
            len: 0,
            pos: 0,
            obs: vec![0.0; capacity * obs_dim],
            next_obs: vec![0.0; capacity * obs_dim],
            discrete_actions: vec![0; capacity],
            continuous_actions: vec![0.0; capacity * act_dim.max(1)],
            rewards: vec![0.0; capacity],
            terminations: vec![false; capacity],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn push_discrete(
        &mut self,
        obs: &[f32],
        action: usize,
        reward: f32,
        next_obs: &[f32],
        terminated: bool,
    ) {
        let p = self.pos;
        self.obs[p * self.obs_dim..(p + 1) * self.obs_dim].copy_from_slice(obs);
        self.next_obs[p * self.obs_dim..(p + 1) * self.obs_dim].copy_from_slice(next_obs);
        self.discrete_actions[p] = action;
        self.rewards[p] = reward;
        self.terminations[p] = terminated;
        self.advance();
    }

    pub fn push_continuous(
        &mut self,
        obs: &[f32],
        action: &[f32],
        reward: f32,
        next_obs: &[f32],
        terminated: bool,
    ) {
        let p = self.pos;
        self.obs[p * self.obs_dim..(p + 1) * self.obs_dim].copy_from_slice(obs);
        self.next_obs[p * self.obs_dim..(p + 1) * self.obs_dim].copy_from_slice(next_obs);
        self.continuous_actions[p * self.act_dim..(p + 1) * self.act_dim].copy_from_slice(action);
        self.rewards[p] = reward;
        self.terminations[p] = terminated;
        self.advance();
    }

    fn advance(&mut self) {
        self.pos = (self.pos + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    /// Uniform minibatch of indices.
    pub fn sample_indices(&self, batch: usize, rng: &mut Rng) -> Vec<usize> {
        (0..batch).map(|_| rng.index(self.len)).collect()
    }

    pub fn obs_at(&self, i: usize) -> &[f32] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn next_obs_at(&self, i: usize) -> &[f32] {
        &self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn discrete_action_at(&self, i: usize) -> usize {
        self.discrete_actions[i]
    }

    pub fn continuous_action_at(&self, i: usize) -> &[f32] {
        &self.continuous_actions[i * self.act_dim..(i + 1) * self.act_dim]
    }

    pub fn reward_at(&self, i: usize) -> f32 {
        self.rewards[i]
    }

    pub fn terminated_at(&self, i: usize) -> bool {
        self.terminations[i]
    }

    /// Gathers a batch into flat row-major matrices for the tape.
    pub fn gather_obs(&self, idx: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(idx.len() * self.obs_dim);
        for &i in idx {
            out.extend_from_slice(self.obs_at(i));
        }
        out
    }

    pub fn gather_next_obs(&self, idx: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(idx.len() * self.obs_dim);
        for &i in idx {
            out.extend_from_slice(self.next_obs_at(i));
        }
        out
    }

    pub fn gather_continuous_actions(&self, idx: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(idx.len() * self.act_dim);
        for &i in idx {
            out.extend_from_slice(self.continuous_action_at(i));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = Replay::new(3, 1, 0);
        for k in 0..5 {
            buf.push_discrete(&[k as f32], k, k as f32, &[k as f32 + 0.5], false);
        }
        assert_eq!(buf.len(), 3);
        // capacity never exceeded; slots hold the last three transitions
        let held: Vec<usize> = (0..3).map(|i| buf.discrete_action_at(i)).collect();
        assert!(held.contains(&2) && held.contains(&3) && held.contains(&4));
    }

    #[test]
    fn sampling_stays_in_range() {
        let mut buf = Replay::new(10, 2, 0);
        for k in 0..4 {
            buf.push_discrete(&[k as f32, 0.0], 0, 0.0, &[0.0, 0.0], false);
        }
        let mut rng = Rng::new(1);
        for i in buf.sample_indices(100, &mut rng) {
            assert!(i < 4);
        }
    }
}
