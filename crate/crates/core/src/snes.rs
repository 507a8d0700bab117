//! Separable natural evolution strategy with rank-based fitness shaping.
//!
//! The search distribution is a diagonal Gaussian `(mu, sigma)`. Each
//! generation samples `z_i = mu + sigma * s_i`, shapes the raw fitness into
//! rank utilities, and applies the natural-gradient updates
//!
//! ```text
//! mu    <- mu + lr_mu * sigma * sum_i u_i s_i
//! sigma <- sigma * exp(lr_sigma / 2 * sum_i u_i (s_i^2 - 1))
//! ```
//!
//! Utilities depend only on fitness ranks, so the optimizer is invariant to
//! monotonic transformations of the fitness vector. NaN fitness is ranked
//! strictly worst; an all-NaN generation skips the update.

use crate::nn::ParamVector;
use crate::{Error, Result, Rng};

/// SNES search distribution state.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
    pub generation: usize,
    pub lr_mu: f32,
    pub lr_sigma: f32,
}

impl SearchState {
    /// Standard SNES learning rates: `lr_mu = 1`, `lr_sigma = (3 + ln d) / (5 sqrt d)`.
    pub fn new(mu: Vec<f32>, sigma_init: f32) -> Self {
        assert!(sigma_init > 0.0, "sigma must be strictly positive");
        let d = mu.len();
        let lr_sigma = (3.0 + (d as f32).ln()) / (5.0 * (d as f32).sqrt());
        SearchState { sigma: vec![sigma_init; d], mu, generation: 0, lr_mu: 1.0, lr_sigma }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// One sampled population plus the standard-normal noise that produced it.
pub struct Population {
    pub members: Vec<ParamVector>,
    pub noise: Vec<Vec<f32>>,
}

/// Samples `popsize` members `z_i = mu + sigma * s_i`. Noise is drawn from
/// per-member child streams, so growing the population never perturbs the
/// samples of existing members.
pub fn ask(state: &SearchState, popsize: usize, rng: &Rng) -> Population {
    assert!(popsize >= 2, "population size must be at least 2");
    let d = state.dim();
    let mut members = Vec::with_capacity(popsize);
    let mut noise = Vec::with_capacity(popsize);
    for i in 0..popsize {
        let mut stream = rng.child(i as u64);
        let s: Vec<f32> = (0..d).map(|_| stream.normal_f32()).collect();
        let z: Vec<f32> =
            s.iter().zip(state.mu.iter().zip(&state.sigma)).map(|(si, (m, sg))| m + sg * si).collect();
        members.push(ParamVector(z));
        noise.push(s);
    }
    Population { members, noise }
}

/// Rank-based utilities: position `k` (best first) gets
/// `max(0, ln(N/2+1) - ln(k+1))`, normalized to sum 1 and shifted by `-1/N`
/// so the utilities sum to zero. NaN fitness ranks strictly worst. Tied
/// fitness values (stable-sorted by member index) share the mean utility of
/// their block, so an all-equal population produces an exactly zero update.
pub fn shape_fitness(fitness: &[f32]) -> Result<Vec<f32>> {
    let n = fitness.len();
    if fitness.iter().all(|f| f.is_nan()) {
        return Err(Error::Numerical("all-NaN population; skipping update".into()));
    }
    // Sort member indices by fitness descending; NaN last; index breaks ties.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let fa = fitness[a];
        let fb = fitness[b];
        match (fa.is_nan(), fb.is_nan()) {
            (true, true) => a.cmp(&b),
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            (false, false) => fb.partial_cmp(&fa).unwrap().then(a.cmp(&b)),
        }
    });

    let half = n as f64 / 2.0 + 1.0;
    let raw: Vec<f64> = (1..=n).map(|k| (half.ln() - (k as f64).ln()).max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    let shifted: Vec<f64> = raw.iter().map(|u| u / total - 1.0 / n as f64).collect();

    // Average utilities over blocks of equal fitness (NaNs form one block).
    let mut utilities = vec![0.0f32; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        let f0 = fitness[order[start]];
        while end < n {
            let fe = fitness[order[end]];
            let tied = (f0.is_nan() && fe.is_nan()) || fe == f0;
            if !tied {
                break;
            }
            end += 1;
        }
        let block_mean: f64 = shifted[start..end].iter().sum::<f64>() / (end - start) as f64;
        for &member in &order[start..end] {
            utilities[member] = block_mean as f32;
        }
        start = end;
    }
    Ok(utilities)
}

/// Outcome of a [`tell`] update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TellOutcome {
    Updated,
    /// The candidate update was non-finite; the previous state was kept.
    RejectedNonFinite,
}

/// Applies the SNES natural-gradient update in place. A non-finite candidate
/// state is rejected, keeping the previous distribution. The generation
/// counter advances either way.
pub fn tell(state: &mut SearchState, noise: &[Vec<f32>], utilities: &[f32]) -> TellOutcome {
    assert_eq!(noise.len(), utilities.len(), "noise/utility length mismatch");
    let d = state.dim();
    let mut grad_mu = vec![0.0f32; d];
    let mut grad_sigma = vec![0.0f32; d];
    for (s, &u) in noise.iter().zip(utilities) {
        debug_assert_eq!(s.len(), d);
        for j in 0..d {
            grad_mu[j] += u * s[j];
            grad_sigma[j] += u * (s[j] * s[j] - 1.0);
        }
    }
    let mut new_mu = state.mu.clone();
    let mut new_sigma = state.sigma.clone();
    for j in 0..d {
        new_mu[j] += state.lr_mu * state.sigma[j] * grad_mu[j];
        new_sigma[j] *= (0.5 * state.lr_sigma * grad_sigma[j]).exp();
    }
    state.generation += 1;
    let finite = new_mu.iter().all(|v| v.is_finite())
        && new_sigma.iter().all(|v| v.is_finite() && *v > 0.0);
    if !finite {
        return TellOutcome::RejectedNonFinite;
    }
    state.mu = new_mu;
    state.sigma = new_sigma;
    TellOutcome::Updated
}

/// Per-generation statistics, one CSV row each.
#[derive(Debug, Clone)]
pub struct GenStats {
    pub generation: usize,
    pub best_fitness: f32,
    pub mean_fitness: f32,
    pub mean_sigma: f32,
    pub nan_count: usize,
}

impl GenStats {
    pub const CSV_HEADER: &'static str =
        "generation,best_fitness,mean_fitness,mean_sigma,nan_count";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.generation, self.best_fitness, self.mean_fitness, self.mean_sigma, self.nan_count
        )
    }
}

/// Result of an [`optimize`] run: the best member ever evaluated plus the
/// per-generation history.
pub struct OptimizeResult {
    pub best: ParamVector,
    pub best_fitness: f32,
    pub state: SearchState,
    pub history: Vec<GenStats>,
}

/// Full ask/shape/tell loop maximizing `objective`. Member evaluations run on
/// the rayon pool; each gets a child stream keyed by (generation, member), so
/// results do not depend on worker count.
pub fn optimize<F>(
    objective: F,
    mu0: Vec<f32>,
    sigma_init: f32,
    popsize: usize,
    generations: usize,
    rng: &Rng,
) -> OptimizeResult
where
    F: Fn(&ParamVector, &mut Rng) -> f32 + Sync,
{
    use rayon::prelude::*;

    let mut state = SearchState::new(mu0, sigma_init);
    let mut best = ParamVector(state.mu.clone());
    let mut best_fitness = f32::NEG_INFINITY;
    let mut history = Vec::with_capacity(generations);

    for gen in 0..generations {
        let gen_rng = rng.child(gen as u64);
        let pop = ask(&state, popsize, &gen_rng.child(0));
        let eval_rng = gen_rng.child(1);
        let fitness: Vec<f32> = pop
            .members
            .par_iter()
            .enumerate()
            .map(|(i, z)| {
                let mut member_rng = eval_rng.child(i as u64);
                objective(z, &mut member_rng)
            })
            .collect();

        let nan_count = fitness.iter().filter(|f| f.is_nan()).count();
        let finite: Vec<f32> = fitness.iter().copied().filter(|f| !f.is_nan()).collect();
        let (gen_best, gen_mean) = if finite.is_empty() {
            (f32::NAN, f32::NAN)
        } else {
            (
                finite.iter().copied().fold(f32::NEG_INFINITY, f32::max),
                finite.iter().sum::<f32>() / finite.len() as f32,
            )
        };
        for (z, &f) in pop.members.iter().zip(&fitness) {
            if !f.is_nan() && f > best_fitness {
                best_fitness = f;
                best = z.clone();
            }
        }
        let mean_sigma = state.sigma.iter().sum::<f32>() / state.dim() as f32;
        history.push(GenStats {
            generation: gen,
            best_fitness: gen_best,
            mean_fitness: gen_mean,
            mean_sigma,
            nan_count,
        });

        match shape_fitness(&fitness) {
            Ok(utilities) => {
                tell(&mut state, &pop.noise, &utilities);
            }
            Err(_) => {
                // All-NaN generation: keep the distribution, advance the clock.
                state.generation += 1;
            }
        }
    }

    OptimizeResult { best, best_fitness, state, history }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ask_with_tiny_sigma_collapses_to_mu() {
        let state = SearchState::new(vec![1.5, -2.0], 1e-12);
        let pop = ask(&state, 4, &Rng::new(0));
        for m in &pop.members {
            assert!((m.0[0] - 1.5).abs() < 1e-9);
            assert!((m.0[1] + 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ask_moments_match_distribution() {
        let mu = vec![0.5, -1.0];
        let mut state = SearchState::new(mu, 1.0);
        state.sigma = vec![1.0, 2.0];
        let n = 100_000;
        let pop = ask(&state, n, &Rng::new(7));
        for j in 0..2 {
            let mean: f64 = pop.members.iter().map(|m| m.0[j] as f64).sum::<f64>() / n as f64;
            let var: f64 = pop
                .members
                .iter()
                .map(|m| (m.0[j] as f64 - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            let expect_mean = state.mu[j] as f64;
            let expect_sd = state.sigma[j] as f64;
            assert!(
                (mean - expect_mean).abs() < 3.0 * expect_sd / (n as f64).sqrt() * 1.5,
                "dim {j}: sample mean {mean} vs {expect_mean}"
            );
            assert!(
                (var.sqrt() - expect_sd).abs() / expect_sd < 0.05,
                "dim {j}: sample sd {} vs {expect_sd}",
                var.sqrt()
            );
        }
    }

    #[test]
    fn utilities_frozen_for_n4() {
        // max(0, ln(3) - ln k) normalized then shifted by -1/4, evaluated
        // numerically with an independent script.
        let u = shape_fitness(&[4.0, 3.0, 2.0, 1.0]).unwrap();
        let expect = [0.4804227103f32, 0.0195772897, -0.25, -0.25];
        for (got, want) in u.iter().zip(expect) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        assert!(u.iter().sum::<f32>().abs() < 1e-6, "utilities must sum to 0");
    }

    #[test]
    fn utilities_are_rank_invariant() {
        let a = shape_fitness(&[3.0, 1.0, 2.0]).unwrap();
        let b = shape_fitness(&[300.0, 10.0, 20.0]).unwrap();
        assert_eq!(a, b, "strictly increasing transforms must not change utilities");
        // exp is strictly increasing too
        let c = shape_fitness(&[3.0f32.exp(), 1.0f32.exp(), 2.0f32.exp()]).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn nan_ranks_strictly_worst() {
        let u = shape_fitness(&[1.0, f32::NAN, 2.0, f32::NAN]).unwrap();
        // NaN members share the worst block; finite members rank above them.
        assert!(u[2] > u[0]);
        assert!(u[0] > u[1]);
        assert_eq!(u[1], u[3]);
        assert!(shape_fitness(&[f32::NAN, f32::NAN]).is_err());
    }

    #[test]
    fn all_equal_fitness_gives_zero_utilities() {
        let u = shape_fitness(&[5.0; 8]).unwrap();
        assert!(u.iter().all(|&x| x.abs() < 1e-7), "tied population must share 0 utility: {u:?}");
    }

    #[test]
    fn tell_zero_utilities_is_identity() {
        let mut state = SearchState::new(vec![0.3, -0.7], 0.5);
        let before = state.clone();
        let noise = vec![vec![1.0, -2.0], vec![0.5, 0.25]];
        tell(&mut state, &noise, &[0.0, 0.0]);
        assert_eq!(state.mu, before.mu);
        assert_eq!(state.sigma, before.sigma);
        assert_eq!(state.generation, 1);
    }

    #[test]
    fn tell_moves_mu_toward_better_direction() {
        // Two members with opposite unit noise on coordinate 0; the positive
        // direction wins, so mu_0 must strictly increase.
        let mut state = SearchState::new(vec![0.0, 0.0], 0.5);
        let noise = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let utilities = shape_fitness(&[1.0, 0.0]).unwrap(); // member 0 better
        tell(&mut state, &noise, &utilities);
        // Hand evaluation: grad_mu0 = 0.5*1 + (-0.5)*(-1) = 1; mu0 += 1 * 0.5 * 1.
        assert!((state.mu[0] - 0.5).abs() < 1e-6, "mu0 = {}", state.mu[0]);
        assert_eq!(state.mu[1], 0.0);
    }

    #[test]
    fn symmetric_noise_moves_only_sigma() {
        let mut state = SearchState::new(vec![0.0; 3], 1.0);
        let s = vec![0.3f32, -1.4, 2.0];
        let neg: Vec<f32> = s.iter().map(|v| -v).collect();
        let noise = vec![s.clone(), neg];
        // Symmetric utilities: mu update cancels, sigma update does not.
        tell(&mut state, &noise, &[0.25, 0.25]);
        assert!(state.mu.iter().all(|&m| m.abs() < 1e-7));
        assert!(state.sigma.iter().zip(&s).any(|(sg, _)| (*sg - 1.0).abs() > 1e-4));
    }

    #[test]
    fn sigma_stays_positive() {
        let mut state = SearchState::new(vec![0.0; 4], 0.05);
        let root = Rng::new(3);
        for gen in 0..200 {
            let pop = ask(&state, 8, &root.child(gen));
            let fitness: Vec<f32> =
                pop.members.iter().map(|m| -m.0.iter().map(|v| v * v).sum::<f32>()).collect();
            let u = shape_fitness(&fitness).unwrap();
            tell(&mut state, &pop.noise, &u);
            assert!(state.sigma.iter().all(|&s| s > 0.0));
        }
    }

    #[test]
    fn rejects_non_finite_updates() {
        let mut state = SearchState::new(vec![0.0, 0.0], 1.0);
        let before = state.clone();
        let noise = vec![vec![f32::INFINITY, 0.0], vec![0.0, 0.0]];
        let outcome = tell(&mut state, &noise, &[0.5, -0.5]);
        assert_eq!(outcome, TellOutcome::RejectedNonFinite);
        assert_eq!(state.mu, before.mu);
        assert_eq!(state.sigma, before.sigma);
        assert_eq!(state.generation, 1);
    }

    #[test]
    fn sphere_converges_2d() {
        let target = [1.2f32, -0.4];
        let result = optimize(
            |z, _| {
                let dx = z.0[0] - target[0];
                let dy = z.0[1] - target[1];
                -(dx * dx + dy * dy)
            },
            vec![5.0, 5.0],
            1.0,
            16,
            400,
            &Rng::new(11),
        );
        let mu = &result.state.mu;
        assert!((mu[0] - target[0]).abs() < 0.05, "mu {mu:?}");
        assert!((mu[1] - target[1]).abs() < 0.05, "mu {mu:?}");
    }

    #[test]
    fn constant_objective_does_not_drift() {
        let result = optimize(|_, _| 1.0, vec![2.0; 6], 0.5, 8, 50, &Rng::new(5));
        for (m, s0) in result.state.mu.iter().zip(&[2.0f32; 6]) {
            assert!((m - s0).abs() < 1e-6, "constant objective drifted: {m}");
        }
    }

    #[test]
    fn monotonic_transform_bit_identical_tell() {
        let root = Rng::new(42);
        let run = |transform: &dyn Fn(f32) -> f32| {
            let mut state = SearchState::new(vec![0.5; 8], 0.3);
            for gen in 0..20 {
                let pop = ask(&state, 12, &root.child(gen));
                let fitness: Vec<f32> = pop
                    .members
                    .iter()
                    .map(|m| transform(-m.0.iter().map(|v| v * v).sum::<f32>()))
                    .collect();
                let u = shape_fitness(&fitness).unwrap();
                tell(&mut state, &pop.noise, &u);
            }
            state
        };
        let id = run(&|f| f);
        let scaled = run(&|f| 1000.0 * f + 7.0);
        let curved = run(&|f| f.exp());
        assert_eq!(id, scaled, "affine transform must leave the trajectory bit-identical");
        assert_eq!(id, curved, "exp transform must leave the trajectory bit-identical");
    }
}
