//! Finite tabular MDPs, value iteration, and exact policy evaluation.
//!
//! Everything here runs in f64: the MDP-to-CB constructions are checked to
//! 1e-8, which 32-bit arithmetic cannot support.

use crate::{Error, Result, Rng};

/// Finite MDP: transition tensor `[s][a][s']`, reward tensor `[s][a]`,
/// discount, and an initial distribution over states.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    pub discount: f64,
    pub initial: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::Contract("transition tensor size mismatch".into()));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::Contract("reward tensor size mismatch".into()));
        }
        if !(0.0..1.0).contains(&discount) || discount <= 0.0 {
            return Err(Error::Contract("discount must lie in (0, 1)".into()));
        }
        if initial.len() != n_states {
            return Err(Error::Contract("initial distribution size mismatch".into()));
        }
        if !reward.iter().all(|r| r.is_finite()) {
            return Err(Error::Contract("rewards must be finite".into()));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                    return Err(Error::Contract(format!(
                        "transition row (s={s}, a={a}) is not a distribution (sum {sum})"
                    )));
                }
            }
        }
        let isum: f64 = initial.iter().sum();
        if (isum - 1.0).abs() > 1e-9 || initial.iter().any(|&p| p < 0.0) {
            return Err(Error::Contract("initial distribution must sum to 1".into()));
        }
        Ok(TabularMdp { n_states, n_actions, transition, reward, discount, initial })
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[(s * self.n_actions + a) * self.n_states..][..self.n_states]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }
}

/// Tabular policy: a deterministic action per state or a distribution per
/// state.
#[derive(Debug, Clone)]
pub enum TabularPolicy {
    Deterministic(Vec<usize>),
    Stochastic(Vec<Vec<f64>>),
}

impl TabularPolicy {
    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        match self {
            TabularPolicy::Deterministic(acts) => {
                if acts.len() != mdp.n_states || acts.iter().any(|&a| a >= mdp.n_actions) {
                    return Err(Error::Contract("policy actions out of range".into()));
                }
            }
            TabularPolicy::Stochastic(dists) => {
                if dists.len() != mdp.n_states {
                    return Err(Error::Contract("policy length mismatch".into()));
                }
                for d in dists {
                    let sum: f64 = d.iter().sum();
                    if d.len() != mdp.n_actions || (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::Contract("policy row is not a distribution".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Probability of action `a` in state `s`.
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        match self {
            TabularPolicy::Deterministic(acts) => {
                if acts[s] == a {
                    1.0
                } else {
                    0.0
                }
            }
            TabularPolicy::Stochastic(dists) => dists[s][a],
        }
    }
}

/// Value iteration to Bellman residual below `tol` in the infinity norm.
/// Returns `(Q*, V*)` with `V*[s] = max_a Q*[s][a]`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if tol <= 0.0 {
        return Err(Error::Contract("tolerance must be positive".into()));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q = vec![0.0f64; ns * na];
    let mut v = vec![0.0f64; ns];
    // Residual shrinks by gamma per sweep; bound iterations generously.
    let max_sweeps = 10_000_000;
    for _ in 0..max_sweeps {
        let mut residual = 0.0f64;
        for s in 0..ns {
            for a in 0..na {
                let mut next = mdp.r(s, a);
                let p = mdp.p(s, a);
                for sp in 0..ns {
                    next += mdp.discount * p[sp] * v[sp];
                }
                residual = residual.max((next - q[s * na + a]).abs());
                q[s * na + a] = next;
            }
            v[s] = (0..na).map(|a| q[s * na + a]).fold(f64::NEG_INFINITY, f64::max);
        }
        if residual < tol {
            return Ok((q, v));
        }
    }
    Err(Error::Numerical("value iteration failed to converge".into()))
}

/// Greedy policy from a Q table, ties resolved to the lowest action index.
pub fn greedy_policy(q: &[f64], n_states: usize, n_actions: usize) -> Vec<usize> {
    (0..n_states)
        .map(|s| {
            let row = &q[s * n_actions..(s + 1) * n_actions];
            let mut best = 0;
            for a in 1..n_actions {
                if row[a] > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// Exact policy evaluation by solving `(I - gamma * P_pi) V = R_pi`.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    policy.validate(mdp)?;
    let ns = mdp.n_states;
    let mut a = vec![0.0f64; ns * ns];
    let mut b = vec![0.0f64; ns];
    for s in 0..ns {
        a[s * ns + s] = 1.0;
        for act in 0..mdp.n_actions {
            let pi = policy.prob(s, act);
            if pi == 0.0 {
                continue;
            }
            b[s] += pi * mdp.r(s, act);
            let p = mdp.p(s, act);
            for sp in 0..ns {
                a[s * ns + sp] -= mdp.discount * pi * p[sp];
            }
        }
    }
    solve_linear(&mut a, &mut b, ns)
}

/// Discounted state occupancy of a policy, normalized to a distribution:
/// solves `(I - gamma * P_pi^T) x = eta_0` and rescales to sum 1.
pub fn occupancy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    policy.validate(mdp)?;
    let ns = mdp.n_states;
    let mut a = vec![0.0f64; ns * ns];
    let mut b = mdp.initial.clone();
    for s in 0..ns {
        a[s * ns + s] += 1.0;
    }
    for s in 0..ns {
        for act in 0..mdp.n_actions {
            let pi = policy.prob(s, act);
            if pi == 0.0 {
                continue;
            }
            let p = mdp.p(s, act);
            for sp in 0..ns {
                // transpose: row sp, column s
                a[sp * ns + s] -= mdp.discount * pi * p[sp];
            }
        }
    }
    let mut x = solve_linear(&mut a, &mut b, ns)?;
    let total: f64 = x.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numerical("occupancy mass must be positive".into()));
    }
    for v in &mut x {
        *v /= total;
        // Tiny negative values can appear from elimination round-off.
        if *v < 0.0 && *v > -1e-12 {
            *v = 0.0;
        }
    }
    Ok(x)
}

/// Gaussian elimination with partial pivoting for the small systems above.
/// `a` is `n x n` row-major, `b` the right-hand side; both are clobbered.
pub fn solve_linear(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < 1e-12 {
            return Err(Error::Numerical("singular linear system".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// Random MDP for oracle sweeps. Transition rows are Dirichlet-ish (normalized
/// uniforms), rewards standard normal. With `unique_argmax`, rewards are
/// redrawn until the optimal action is unique in every state, so greedy
/// equivalence checks are unambiguous.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    discount: f64,
    unique_argmax: bool,
    rng: &mut Rng,
) -> TabularMdp {
    let transition_of = |rng: &mut Rng| {
        let mut t = vec![0.0f64; n_states * n_actions * n_states];
        for row in t.chunks_mut(n_states) {
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = rng.uniform_f32() as f64 + 1e-3;
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
            // Force exact row sums so construction never trips the 1e-9 gate.
            let s: f64 = row.iter().sum();
            row[n_states - 1] += 1.0 - s;
        }
        t
    };
    let transition = transition_of(rng);
    let mut initial = vec![0.0f64; n_states];
    initial[0] = 1.0;
    loop {
        let reward: Vec<f64> = (0..n_states * n_actions).map(|_| rng.normal_f32() as f64).collect();
        let mdp = TabularMdp::new(
            n_states,
            n_actions,
            transition.clone(),
            reward,
            discount,
            initial.clone(),
        )
        .expect("generated MDP must be valid");
        if !unique_argmax {
            return mdp;
        }
        let (q, _) = value_iteration(&mdp, 1e-12).expect("value iteration on random MDP");
        let unique = (0..n_states).all(|s| {
            let row = &q[s * n_actions..(s + 1) * n_actions];
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.iter().filter(|&&v| (v - best).abs() < 1e-9).count() == 1
        });
        if unique {
            return mdp;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn self_loop_mdp() -> TabularMdp {
        // Single state, two self-loop actions with rewards {0, 1}, gamma 0.9.
        TabularMdp::new(1, 2, vec![1.0, 1.0], vec![0.0, 1.0], 0.9, vec![1.0]).unwrap()
    }

    #[test]
    fn geometric_series_q_values() {
        let mdp = self_loop_mdp();
        let (q, v) = value_iteration(&mdp, 1e-10).unwrap();
        assert!((q[0] - 9.0).abs() < 1e-7, "Q(a0) = 0 + 0.9 * 10 = 9, got {}", q[0]);
        assert!((q[1] - 10.0).abs() < 1e-7, "Q(a1) = 1/(1-0.9) = 10, got {}", q[1]);
        assert!((v[0] - 10.0).abs() < 1e-7);
    }

    #[test]
    fn zero_reward_mdp_has_zero_values() {
        let mdp =
            TabularMdp::new(1, 2, vec![1.0, 1.0], vec![0.0, 0.0], 0.9, vec![1.0]).unwrap();
        let (q, v) = value_iteration(&mdp, 1e-10).unwrap();
        assert!(q.iter().all(|&x| x.abs() < 1e-12));
        assert!(v.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn greedy_matches_vstar_on_random_mdps() {
        let mut rng = crate::Rng::new(123);
        for _ in 0..20 {
            let mdp = random_mdp(10, 4, 0.9, false, &mut rng);
            let (q, v) = value_iteration(&mdp, 1e-12).unwrap();
            let pi = TabularPolicy::Deterministic(greedy_policy(&q, 10, 4));
            let v_pi = policy_evaluation(&mdp, &pi).unwrap();
            for s in 0..10 {
                assert!(
                    (v_pi[s] - v[s]).abs() < 1e-8,
                    "greedy policy value {} != V* {}",
                    v_pi[s],
                    v[s]
                );
            }
        }
    }

    #[test]
    fn value_iteration_is_a_contraction() {
        // Track residuals manually: one Gauss-Seidel-free Jacobi-style sweep.
        let mut rng = crate::Rng::new(7);
        let mdp = random_mdp(8, 3, 0.9, false, &mut rng);
        let (ns, na) = (mdp.n_states, mdp.n_actions);
        let mut q = vec![0.0f64; ns * na];
        let mut prev_residual = f64::INFINITY;
        for sweep in 0..60 {
            let v: Vec<f64> = (0..ns)
                .map(|s| (0..na).map(|a| q[s * na + a]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let mut residual = 0.0f64;
            let mut next_q = q.clone();
            for s in 0..ns {
                for a in 0..na {
                    let mut t = mdp.r(s, a);
                    for sp in 0..ns {
                        t += mdp.discount * mdp.p(s, a)[sp] * v[sp];
                    }
                    residual = residual.max((t - q[s * na + a]).abs());
                    next_q[s * na + a] = t;
                }
            }
            q = next_q;
            if sweep > 0 && prev_residual > 1e-12 {
                assert!(
                    residual <= mdp.discount * prev_residual + 1e-12,
                    "sweep {sweep}: residual {residual} vs gamma * {prev_residual}"
                );
            }
            prev_residual = residual;
        }
    }

    #[test]
    fn occupancy_is_a_distribution_supported_on_visited_states() {
        let mut rng = crate::Rng::new(55);
        let mdp = random_mdp(6, 3, 0.8, false, &mut rng);
        let (q, _) = value_iteration(&mdp, 1e-12).unwrap();
        let pi = TabularPolicy::Deterministic(greedy_policy(&q, 6, 3));
        let occ = occupancy(&mdp, &pi).unwrap();
        let sum: f64 = occ.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(occ.iter().all(|&p| p >= 0.0));
        // Fully-mixing random transitions make every state visited.
        assert!(occ.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn invalid_mdps_are_rejected() {
        // Row does not sum to one.
        assert!(TabularMdp::new(1, 1, vec![0.5], vec![0.0], 0.9, vec![1.0]).is_err());
        // Non-finite reward.
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![f64::NAN], 0.9, vec![1.0]).is_err());
        // Discount out of range.
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, vec![1.0]).is_err());
        // Bad tolerance.
        let mdp = self_loop_mdp();
        assert!(value_iteration(&mdp, 0.0).is_err());
    }

    #[test]
    fn solve_linear_small_system() {
        // 2x + y = 5; x - y = 1  =>  x = 2, y = 1
        let mut a = vec![2.0, 1.0, 1.0, -1.0];
        let mut b = vec![5.0, 1.0];
        let x = solve_linear(&mut a, &mut b, 2).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!((x[1] - 1.0).abs() < 1e-12);
    }
}
