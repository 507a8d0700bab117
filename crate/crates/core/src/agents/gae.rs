//! Generalized advantage estimation.

/// Standard GAE recursion. `values` must hold one entry per step plus the
/// bootstrap value of the state after the final step; `dones` are termination
/// flags (a truncated episode keeps `done = false` and supplies the truncated
/// state's value as the bootstrap, so truncation bootstraps and termination
/// zeroes).
pub fn gae(rewards: &[f32], values: &[f32], dones: &[bool], gamma: f32, lambda: f32) -> Vec<f32> {
    let t = rewards.len();
    assert_eq!(dones.len(), t, "rewards/dones length mismatch");
    assert_eq!(values.len(), t + 1, "values must include the bootstrap entry");
    let mut adv = vec![0.0f32; t];
    let mut acc = 0.0f32;
    for i in (0..t).rev() {
        let nonterminal = if dones[i] { 0.0 } else { 1.0 };
        let delta = rewards[i] + gamma * values[i + 1] * nonterminal - values[i];
        acc = delta + gamma * lambda * nonterminal * acc;
        adv[i] = acc;
    }
    adv
}
