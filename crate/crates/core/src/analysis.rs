//! Interpretability and reporting: optimal-action maps over state grids,
//! reward-variance feature importance, CB-optimal policy extraction, and
//! IQM/bootstrap aggregation.
//!
//! Everything here reads a checkpointed SCB; nothing mutates it, so grid
//! cells parallelize trivially.

use crate::envs::{Action, ActionSpace, EnvId};
use crate::scb::Scb;
use crate::tape::Tape;
use crate::{Error, Result, Rng};

/// Finite probe box over the EE observation space, used for analysis sweeps.
/// Dimensions that the environment leaves unbounded get documented finite
/// ranges (velocities to +-3 for CartPole; termination bounds elsewhere).
pub fn probe_box(env_id: EnvId) -> Vec<(f32, f32)> {
    match env_id {
        EnvId::CartPoleV1 => {
            vec![(-2.4, 2.4), (-3.0, 3.0), (-0.2095, 0.2095), (-3.0, 3.0)]
        }
        EnvId::MountainCarV0 | EnvId::MountainCarContinuousV0 => {
            vec![(-1.2, 0.6), (-0.07, 0.07)]
        }
        EnvId::PendulumV1 => vec![(-1.0, 1.0), (-1.0, 1.0), (-8.0, 8.0)],
        EnvId::AcrobotV1 => vec![
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-1.0, 1.0),
            (-4.0 * std::f32::consts::PI, 4.0 * std::f32::consts::PI),
            (-9.0 * std::f32::consts::PI, 9.0 * std::f32::consts::PI),
        ],
    }
}

/// One observation dimension of a [`StateGrid`]: swept over a range or held
/// fixed.
#[derive(Debug, Clone)]
pub enum GridDim {
    Sweep { lo: f32, hi: f32, n: usize },
    Fixed(f32),
}

/// Grid over the EE observation box with fixed values on unswept dimensions.
#[derive(Debug, Clone)]
pub struct StateGrid {
    pub dims: Vec<GridDim>,
}

impl StateGrid {
    pub fn validate(&self) -> Result<()> {
        for d in &self.dims {
            if let GridDim::Sweep { lo, hi, n } = d {
                if *n < 2 {
                    return Err(Error::Config("swept dims need resolution >= 2".into()));
                }
                if !(lo < hi) {
                    return Err(Error::Config("swept range must have lo < hi".into()));
                }
            }
        }
        Ok(())
    }

    /// Default grid for an environment: first two probe-box dims swept at
    /// `resolution`, the rest fixed at the box center.
    pub fn default_for(env_id: EnvId, resolution: usize) -> Self {
        let bx = probe_box(env_id);
        let dims = bx
            .iter()
            .enumerate()
            .map(|(i, (lo, hi))| {
                if i < 2 {
                    GridDim::Sweep { lo: *lo, hi: *hi, n: resolution }
                } else {
                    GridDim::Fixed(0.5 * (lo + hi))
                }
            })
            .collect();
        StateGrid { dims }
    }

    /// All grid points, row-major over the swept dimensions.
    pub fn points(&self) -> Vec<Vec<f32>> {
        let mut points = vec![Vec::new()];
        for d in &self.dims {
            let values: Vec<f32> = match d {
                GridDim::Fixed(v) => vec![*v],
                GridDim::Sweep { lo, hi, n } => {
                    (0..*n).map(|i| lo + (hi - lo) * i as f32 / (*n - 1) as f32).collect()
                }
            };
            let mut next = Vec::with_capacity(points.len() * values.len());
            for p in &points {
                for v in &values {
                    let mut q = p.clone();
                    q.push(*v);
                    next.push(q);
                }
            }
            points = next;
        }
        points
    }
}

/// Best action for one state of a CB reward network: exact argmax over
/// discrete actions; for continuous boxes a 64-point uniform grid seeds 100
/// gradient-ascent steps (step 0.01, clipped to the box) from the best 4
/// candidates.
pub fn optimal_action(scb: &Scb, obs: &[f32]) -> Action {
    let space = scb.spec().env_id.action_space();
    match &space {
        ActionSpace::Discrete(n) => {
            let mut best = 0usize;
            let mut best_r = f32::NEG_INFINITY;
            for a in 0..*n {
                let r = scb.reward(obs, &Action::Discrete(a));
                // ties resolve to the lowest action index
                if r > best_r {
                    best_r = r;
                    best = a;
                }
            }
            Action::Discrete(best)
        }
        ActionSpace::Box { low, high } => {
            let k = low.len();
            // 64 seed points: a uniform line for 1-d spaces, per-dim uniform
            // lattice walk otherwise
            let seeds: Vec<Vec<f32>> = (0..64)
                .map(|i| {
                    (0..k)
                        .map(|j| low[j] + (high[j] - low[j]) * (i as f32 + 0.5) / 64.0)
                        .collect()
                })
                .collect();
            let mut scored: Vec<(f32, Vec<f32>)> = seeds
                .into_iter()
                .map(|a| (scb.reward(obs, &Action::Continuous(a.clone())), a))
                .collect();
            scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal));
            let mut best_a = scored[0].1.clone();
            let mut best_r = scored[0].0;
            for (_, mut a) in scored.into_iter().take(4) {
                for _ in 0..100 {
                    let g = reward_action_gradient(scb, obs, &a);
                    for j in 0..k {
                        a[j] = (a[j] + 0.01 * g[j]).clamp(low[j], high[j]);
                    }
                }
                let r = scb.reward(obs, &Action::Continuous(a.clone()));
                if r > best_r {
                    best_r = r;
                    best_a = a;
                }
            }
            Action::Continuous(best_a)
        }
    }
}

/// dR/da of the reward network at `(obs, action)`.
fn reward_action_gradient(scb: &Scb, obs: &[f32], action: &[f32]) -> Vec<f32> {
    let spec = scb.spec();
    let mut t = Tape::<f32>::new();
    let theta = t.constant(1, scb.params().net_params.len(), scb.params().net_params.0.clone());
    let o = t.constant(1, obs.len(), obs.to_vec());
    let a = t.param(1, action.len(), action.to_vec());
    let x = t.concat_cols(o, a);
    let out = t.mlp(&spec.net, theta, x);
    let reward = if spec.net.output_dim == 1 {
        out
    } else {
        t.slice_cols(out, spec.env_id.obs_dim(), 1)
    };
    let loss = t.sum_all(reward);
    let mut grads = t.backward(loss).expect("scalar reward");
    grads.take(a).unwrap_or_else(|| vec![0.0; action.len()])
}

/// Optimal-action map over a state grid: `(state, best action)` per point.
pub fn optimal_action_map(scb: &Scb, grid: &StateGrid) -> Result<Vec<(Vec<f32>, Action)>> {
    grid.validate()?;
    if grid.dims.len() != scb.spec().env_id.obs_dim() {
        return Err(Error::Config("grid dimensionality must match the observation".into()));
    }
    Ok(grid
        .points()
        .into_iter()
        .map(|p| {
            let a = optimal_action(scb, &p);
            (p, a)
        })
        .collect())
}

/// Reward-variance feature importance: for each observation dimension, the
/// variance of the reward when sweeping that entry (everything else fixed),
/// averaged over probe (state, action) pairs and normalized to sum 1. A
/// zero-variance reward yields the uniform vector plus a warning flag.
pub struct ImportanceReport {
    pub importance: Vec<f32>,
    /// True when the reward ignored every probe and the output defaulted to
    /// uniform.
    pub degenerate: bool,
}

pub fn feature_importance(
    scb: &Scb,
    probe_states: &[Vec<f32>],
    probe_actions: &[Action],
    sweep_ranges: &[(f32, f32)],
    samples: usize,
) -> Result<ImportanceReport> {
    if samples < 2 {
        return Err(Error::Config("need at least 2 sweep samples".into()));
    }
    let obs_dim = scb.spec().env_id.obs_dim();
    if sweep_ranges.len() != obs_dim {
        return Err(Error::Config("sweep ranges must cover every observation dim".into()));
    }
    let mut sums = vec![0.0f64; obs_dim];
    for state in probe_states {
        for action in probe_actions {
            for j in 0..obs_dim {
                let (lo, hi) = sweep_ranges[j];
                let mut mean = 0.0f64;
                let mut m2 = 0.0f64;
                let mut s = state.clone();
                for i in 0..samples {
                    s[j] = lo + (hi - lo) * i as f32 / (samples - 1) as f32;
                    let r = scb.reward(&s, action) as f64;
                    // Welford accumulation
                    let n = (i + 1) as f64;
                    let d = r - mean;
                    mean += d / n;
                    m2 += d * (r - mean);
                }
                sums[j] += m2 / samples as f64;
            }
        }
    }
    let total: f64 = sums.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Ok(ImportanceReport {
            importance: vec![1.0 / obs_dim as f32; obs_dim],
            degenerate: true,
        });
    }
    Ok(ImportanceReport {
        importance: sums.iter().map(|v| (v / total) as f32).collect(),
        degenerate: false,
    })
}

/// Default probe set: 256 states uniform over the probe box, 16 actions
/// uniform over the action space, 64 sweep samples per dimension.
pub fn feature_importance_default(scb: &Scb, rng: &mut Rng) -> Result<ImportanceReport> {
    let env_id = scb.spec().env_id;
    let bx = probe_box(env_id);
    let states: Vec<Vec<f32>> = (0..256)
        .map(|_| bx.iter().map(|(lo, hi)| rng.uniform_in(*lo, *hi)).collect())
        .collect();
    let actions: Vec<Action> = (0..16)
        .map(|_| match env_id.action_space() {
            ActionSpace::Discrete(n) => Action::Discrete(rng.index(n)),
            ActionSpace::Box { low, high } => Action::Continuous(
                low.iter().zip(&high).map(|(l, h)| rng.uniform_in(*l, *h)).collect(),
            ),
        })
        .collect();
    feature_importance(scb, &states, &actions, &bx, 64)
}

/// The CB-optimal policy: per queried state, the argmax of the reward
/// network (exact for discrete spaces, grid+ascent for continuous ones).
/// This policy is never trained; it reads the reward net directly.
pub struct CbOptimalPolicy<'a> {
    scb: &'a Scb,
}

impl<'a> CbOptimalPolicy<'a> {
    pub fn act(&self, obs: &[f32]) -> Action {
        optimal_action(self.scb, obs)
    }
}

pub fn cb_optimal_policy(scb: &Scb) -> Result<CbOptimalPolicy<'_>> {
    if scb.spec().mode != crate::scb::ScbMode::Cb {
        return Err(Error::Config(
            "the return-equals-reward identity holds only for CB-mode checkpoints".into(),
        ));
    }
    Ok(CbOptimalPolicy { scb })
}

/// Expert-normalized performance: `(R - R_random) / (R_expert - R_random)`,
/// mapping the random policy to 0 and the expert to 1.
pub fn normalized_performance(
    returns: &[f32],
    random_ref: f32,
    expert_ref: f32,
) -> Result<Vec<f32>> {
    let denom = expert_ref - random_ref;
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::Config("expert and random references must differ".into()));
    }
    Ok(returns.iter().map(|r| (r - random_ref) / denom).collect())
}

/// Interquartile mean with a percentile-bootstrap 95% confidence interval.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub iqm: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// Mean of the middle 50% (trimming `floor(n/4)` from each end).
pub fn iqm(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let trim = sorted.len() / 4;
    let mid = &sorted[trim..sorted.len() - trim];
    mid.iter().sum::<f64>() / mid.len() as f64
}

pub fn iqm_ci(samples: &[f64], bootstrap_iters: usize, rng: &mut Rng) -> Result<MetricReport> {
    if samples.len() < 2 {
        return Err(Error::Config("need at least 2 samples for an IQM report".into()));
    }
    let point = iqm(samples);
    let mut boots = Vec::with_capacity(bootstrap_iters);
    let mut resample = vec![0.0f64; samples.len()];
    for _ in 0..bootstrap_iters {
        for slot in resample.iter_mut() {
            *slot = samples[rng.index(samples.len())];
        }
        boots.push(iqm(&resample));
    }
    boots.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pick = |q: f64| boots[((boots.len() - 1) as f64 * q).round() as usize];
    // the percentile interval is widened if needed so it always brackets the
    // point estimate
    let ci_low = pick(0.025).min(point);
    let ci_high = pick(0.975).max(point);
    Ok(MetricReport { iqm: point, ci_low, ci_high, n: samples.len() })
}
