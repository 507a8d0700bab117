//! Exact MDP-to-CB constructions on tabular MDPs.
//!
//! Given an MDP's optimal Q-function, a contextual bandit whose reward equals
//! `Q*` under argmax has greedy policies that are optimal in the original
//! MDP. Three reward tables realize this: `Q*` itself, the negative distance
//! to the optimal action index, and the indicator of the optimal action.

use crate::envs::{
    greedy_policy, occupancy, policy_evaluation, random_mdp, value_iteration, TabularMdp,
    TabularPolicy,
};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CbVariant {
    QStar,
    NegDistance,
    Indicator,
}

impl std::str::FromStr for CbVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "q_star" | "qstar" => Ok(CbVariant::QStar),
            "neg_distance" => Ok(CbVariant::NegDistance),
            "indicator" => Ok(CbVariant::Indicator),
            other => Err(Error::Config(format!("unknown CB variant '{other}'"))),
        }
    }
}

/// A contextual bandit constructed from a tabular MDP: a reward table over
/// `(state, action)` and an initial state distribution.
#[derive(Debug, Clone)]
pub struct ConstructedCb {
    pub n_states: usize,
    pub n_actions: usize,
    pub reward: Vec<f64>,
    pub initial: Vec<f64>,
    pub variant: CbVariant,
}

impl ConstructedCb {
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Greedy policy in the bandit, ties to the lowest action index.
    pub fn greedy(&self) -> Vec<usize> {
        greedy_policy(&self.reward, self.n_states, self.n_actions)
    }
}

/// States reachable from the initial distribution's support under a
/// deterministic policy.
fn reachable_states(mdp: &TabularMdp, policy: &[usize]) -> Vec<bool> {
    let mut reach = vec![false; mdp.n_states];
    let mut stack: Vec<usize> =
        (0..mdp.n_states).filter(|&s| mdp.initial[s] > 0.0).collect();
    for &s in &stack {
        reach[s] = true;
    }
    while let Some(s) = stack.pop() {
        let p = mdp.p(s, policy[s]);
        for sp in 0..mdp.n_states {
            if p[sp] > 0.0 && !reach[sp] {
                reach[sp] = true;
                stack.push(sp);
            }
        }
    }
    reach
}

/// Builds the bandit. `q_star` pairs `R_B = Q*` with the discounted occupancy
/// of the optimal policy; the alternates (`R_B` equal to `Q*` under argmax
/// only) use the uniform distribution over states reachable under the optimal
/// policy, which is positive on every state it visits.
pub fn construct_cb(mdp: &TabularMdp, variant: CbVariant) -> Result<ConstructedCb> {
    let (q, _v) = value_iteration(mdp, 1e-12)?;
    let pi_star = greedy_policy(&q, mdp.n_states, mdp.n_actions);
    let (reward, initial) = match variant {
        CbVariant::QStar => {
            let occ = occupancy(mdp, &TabularPolicy::Deterministic(pi_star.clone()))?;
            (q, occ)
        }
        CbVariant::NegDistance | CbVariant::Indicator => {
            let mut reward = vec![0.0f64; mdp.n_states * mdp.n_actions];
            for s in 0..mdp.n_states {
                for a in 0..mdp.n_actions {
                    reward[s * mdp.n_actions + a] = match variant {
                        // continuous embedding of the action indices
                        CbVariant::NegDistance => -((a as f64 - pi_star[s] as f64).abs()),
                        CbVariant::Indicator => {
                            if a == pi_star[s] {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        CbVariant::QStar => unreachable!(),
                    };
                }
            }
            let reach = reachable_states(mdp, &pi_star);
            let count = reach.iter().filter(|&&r| r).count() as f64;
            let initial = reach
                .iter()
                .map(|&r| if r { 1.0 / count } else { 0.0 })
                .collect();
            (reward, initial)
        }
    };
    let cb = ConstructedCb {
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        reward,
        initial,
        variant,
    };
    // rho_0 must be positive wherever the optimal policy walks
    let occ = occupancy(mdp, &TabularPolicy::Deterministic(pi_star))?;
    for s in 0..mdp.n_states {
        if occ[s] > 1e-12 && cb.initial[s] <= 0.0 {
            return Err(Error::Contract(format!(
                "initial distribution misses visited state {s}"
            )));
        }
    }
    Ok(cb)
}

/// Exactness check: the greedy-in-CB policy, evaluated exactly in the source
/// MDP, must match `V*` on every state. Returns the worst absolute gap.
pub fn lemma1_gap(mdp: &TabularMdp, variant: CbVariant) -> Result<f64> {
    let cb = construct_cb(mdp, variant)?;
    let pi_b = TabularPolicy::Deterministic(cb.greedy());
    let v_pi = policy_evaluation(mdp, &pi_b)?;
    let (_, v_star) = value_iteration(mdp, 1e-12)?;
    Ok(v_pi
        .iter()
        .zip(&v_star)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max))
}

/// Report of a randomized exactness sweep.
#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub passes: usize,
    pub failures: usize,
    pub worst_gap: f64,
    pub failure_details: Vec<String>,
}

/// Runs `n_mdps` random MDPs (sizes up to `max_states` x `max_actions`,
/// discount cycling over {0.8, 0.9, 0.99}) through every requested variant
/// with tolerance `tol`. Reward tables are redrawn until the optimal action
/// is unique in every state, so greedy equivalence is unambiguous.
pub fn lemma1_sweep(
    n_mdps: usize,
    max_states: usize,
    max_actions: usize,
    variants: &[CbVariant],
    tol: f64,
    seed: u64,
) -> SweepReport {
    let root = Rng::new(seed);
    let discounts = [0.8, 0.9, 0.99];
    let mut report = SweepReport::default();
    for i in 0..n_mdps {
        let mut rng = root.child(i as u64);
        let n_states = 2 + rng.index(max_states.saturating_sub(1).max(1));
        let n_actions = 2 + rng.index(max_actions.saturating_sub(1).max(1));
        let discount = discounts[i % discounts.len()];
        let mdp = random_mdp(n_states, n_actions, discount, true, &mut rng);
        for &variant in variants {
            match lemma1_gap(&mdp, variant) {
                Ok(gap) => {
                    report.worst_gap = report.worst_gap.max(gap);
                    if gap <= tol {
                        report.passes += 1;
                    } else {
                        report.failures += 1;
                        report.failure_details.push(format!(
                            "mdp {i} ({n_states}s/{n_actions}a, gamma {discount}) {variant:?}: gap {gap:.3e}"
                        ));
                    }
                }
                Err(e) => {
                    report.failures += 1;
                    report.failure_details.push(format!("mdp {i} {variant:?}: {e}"));
                }
            }
        }
    }
    report
}

/// Embeds a constructed CB as a tabular MDP with one absorbing terminal
/// state, for checking the bandit identity `Q_B = R_B` through value
/// iteration itself.
pub fn cb_as_mdp(cb: &ConstructedCb, discount: f64) -> Result<TabularMdp> {
    let ns = cb.n_states + 1; // last state is terminal
    let na = cb.n_actions;
    let mut transition = vec![0.0f64; ns * na * ns];
    let mut reward = vec![0.0f64; ns * na];
    for s in 0..ns {
        for a in 0..na {
            // every action lands in the absorbing terminal state
            transition[(s * na + a) * ns + (ns - 1)] = 1.0;
            if s < cb.n_states {
                reward[s * na + a] = cb.r(s, a);
            }
        }
    }
    let mut initial = cb.initial.clone();
    initial.push(0.0);
    TabularMdp::new(ns, na, transition, reward, discount, initial)
}
