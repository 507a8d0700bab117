//! Bi-level meta-training: a population of SCB genomes is scored by training
//! RL agents inside each candidate environment and evaluating the frozen
//! agents in the real environment, then updated with SNES.
//!
//! Seeds split hierarchically generation -> member -> (algorithm, rollout),
//! so results are identical under any worker count and adding members never
//! perturbs existing members' streams.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{self, AlgoId};
use crate::checkpoint::{FitnessStats, ScbCheckpoint, SearchSnapshot};
use crate::envs::{ClassicEnv, EnvId};
use crate::nn::ParamVector;
use crate::scb::{LatentDist, Scb, ScbMode, ScbParams, ScbSpec};
use crate::snes::{self, SearchState};
use crate::{Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurriculumKind {
    None,
    Linear,
}

/// Generation-indexed schedule for the EE evaluation episode length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Curriculum {
    pub kind: CurriculumKind,
    pub init_len: usize,
    pub final_len: usize,
    pub begin_gen: usize,
    pub transition_gens: usize,
}

impl Curriculum {
    pub fn none() -> Self {
        Curriculum { kind: CurriculumKind::None, init_len: 1, final_len: 1, begin_gen: 0, transition_gens: 1 }
    }

    /// The decreasing 1000 -> 200 schedule used for MountainCar.
    pub fn mountain_car() -> Self {
        Curriculum {
            kind: CurriculumKind::Linear,
            init_len: 1000,
            final_len: 200,
            begin_gen: 200,
            transition_gens: 600,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.init_len < 1 || self.final_len < 1 || self.transition_gens < 1 {
            return Err(crate::Error::Config("curriculum lengths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Evaluation episode length at a generation: the EE default without a
/// curriculum; otherwise flat before `begin_gen`, linear over
/// `transition_gens`, clamped at `final_len` afterwards.
pub fn eval_length(curriculum: &Curriculum, default_len: usize, generation: usize) -> usize {
    match curriculum.kind {
        CurriculumKind::None => default_len,
        CurriculumKind::Linear => {
            if generation < curriculum.begin_gen {
                curriculum.init_len
            } else if generation >= curriculum.begin_gen + curriculum.transition_gens {
                curriculum.final_len
            } else {
                let frac = (generation - curriculum.begin_gen) as f64
                    / curriculum.transition_gens as f64;
                let len = curriculum.init_len as f64
                    + frac * (curriculum.final_len as f64 - curriculum.init_len as f64);
                len.round() as usize
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiAlgoMode {
    /// Train every admissible algorithm per member; the fitness is the mean
    /// of their returns.
    All,
    /// One algorithm per generation, cycling `gen mod |A|`.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HpSampling {
    Fixed,
    Sampled,
}

/// Full meta-training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaConfig {
    pub env_id: EnvId,
    pub popsize: usize,
    pub generations: usize,
    /// Agents trained per member per algorithm, with independent seeds.
    pub num_rollouts: usize,
    pub eval_seeds: usize,
    pub eval_seeds_population_mean: usize,
    pub multi_algo_mode: MultiAlgoMode,
    pub hp_sampling: HpSampling,
    pub scb_mode: ScbMode,
    pub latent_dist: LatentDist,
    pub curriculum: Curriculum,
    /// Inner-loop step budget per agent.
    pub total_agent_steps: usize,
    pub sigma_init: f32,
    /// Population-mean evaluation cadence in generations.
    pub pop_mean_eval_every: usize,
    /// Episode cap for T/TI modes (CB is always 1); defaults to the EE horizon.
    pub max_episode_len: Option<usize>,
}

impl MetaConfig {
    /// Desk-scale defaults: population sizes and generation counts are half
    /// the full-scale values; everything else follows the per-environment
    /// tables.
    pub fn desk_default(env_id: EnvId) -> Self {
        let mut cfg = Self::full_scale(env_id);
        cfg.popsize /= 2;
        cfg.generations /= 2;
        cfg
    }

    /// Full-scale per-environment values: population 128 for classic control
    /// (64 for Pendulum), 300 generations (1000 for MountainCar and
    /// Pendulum), 1 training rollout (8 for Pendulum), 50 evaluation seeds,
    /// 64 population-mean seeds, all-algorithms fitness, sampled HPs.
    pub fn full_scale(env_id: EnvId) -> Self {
        let (popsize, generations, num_rollouts) = match env_id {
            EnvId::PendulumV1 => (64, 1000, 8),
            EnvId::MountainCarV0 => (128, 1000, 1),
            _ => (128, 300, 1),
        };
        let curriculum = if env_id == EnvId::MountainCarV0 {
            Curriculum::mountain_car()
        } else {
            Curriculum::none()
        };
        MetaConfig {
            env_id,
            popsize,
            generations,
            num_rollouts,
            eval_seeds: 50,
            eval_seeds_population_mean: 64,
            multi_algo_mode: MultiAlgoMode::All,
            hp_sampling: HpSampling::Sampled,
            scb_mode: ScbMode::Cb,
            latent_dist: LatentDist::Gaussian,
            curriculum,
            total_agent_steps: agents::DEFAULT_TOTAL_STEPS,
            sigma_init: 0.05,
            pop_mean_eval_every: 10,
            max_episode_len: None,
        }
    }

    /// The SCB architecture this config meta-learns.
    pub fn scb_spec(&self) -> ScbSpec {
        let mut spec = match self.scb_mode {
            ScbMode::Cb => ScbSpec::cb(self.env_id),
            ScbMode::T | ScbMode::Ti => ScbSpec::transition(
                self.env_id,
                self.scb_mode == ScbMode::Ti,
                self.max_episode_len.unwrap_or_else(|| self.env_id.default_horizon()),
            ),
        };
        spec = spec.with_latent(self.latent_dist);
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.popsize < 2 {
            return Err(crate::Error::Config("population size must be >= 2".into()));
        }
        if self.generations == 0 {
            return Err(crate::Error::Config("generations must be >= 1".into()));
        }
        if self.eval_seeds == 0 || self.eval_seeds_population_mean == 0 {
            return Err(crate::Error::Config("eval seeds must be >= 1".into()));
        }
        self.curriculum.validate()?;
        self.scb_spec().validate()
    }

    fn algos_for_generation(&self, generation: usize) -> Vec<AlgoId> {
        let all = AlgoId::admissible(self.env_id);
        match self.multi_algo_mode {
            MultiAlgoMode::All => all.to_vec(),
            MultiAlgoMode::Sequential => vec![all[generation % all.len()]],
        }
    }
}

/// Fitness breakdown of a single member evaluation.
#[derive(Debug, Clone, Default)]
pub struct FitnessDetail {
    pub fitness: f32,
    /// Inner-loop environment steps consumed.
    pub inner_steps: usize,
    /// Mean EE return per trained agent, in (algorithm, rollout) order.
    pub per_agent: Vec<f32>,
}

/// Trains the configured agents inside the candidate SCB, freezes them, and
/// scores the mean episodic return over `eval_seeds` rollouts in the EE
/// capped at the curriculum's evaluation length. Any inner-loop NaN turns the
/// whole fitness into NaN.
pub fn fitness_detail(
    genome: &ParamVector,
    config: &MetaConfig,
    generation: usize,
    rng: &Rng,
) -> FitnessDetail {
    let spec = config.scb_spec();
    if !genome.all_finite() {
        return FitnessDetail { fitness: f32::NAN, ..Default::default() };
    }
    let scb = match Scb::from_genome(spec, genome) {
        Ok(s) => s,
        Err(_) => return FitnessDetail { fitness: f32::NAN, ..Default::default() },
    };
    let eval_len =
        eval_length(&config.curriculum, config.env_id.default_horizon(), generation);
    let ee = ClassicEnv::new(config.env_id).with_horizon(eval_len);
    let fixed = config.hp_sampling == HpSampling::Fixed;

    let mut detail = FitnessDetail::default();
    for (a, algo) in config.algos_for_generation(generation).into_iter().enumerate() {
        for r in 0..config.num_rollouts {
            let agent_rng = rng.child(a as u64).child(r as u64);
            let mut task = agents::task_for(config.env_id, algo, &mut agent_rng.child(0), fixed);
            task.total_steps = config.total_agent_steps;
            let run = match agents::train(&task, &scb, &mut agent_rng.child(1)) {
                Ok(run) => run,
                Err(crate::Error::Numerical(_)) => {
                    return FitnessDetail { fitness: f32::NAN, ..detail };
                }
                Err(_) => return FitnessDetail { fitness: f32::NAN, ..detail },
            };
            detail.inner_steps += run.log.steps_consumed;
            // frozen agent, averaged over evaluation seeds
            let eval_rng = agent_rng.child(2);
            let mut total = 0.0f32;
            for s in 0..config.eval_seeds {
                let mut stream = eval_rng.child(s as u64);
                total += crate::envs::rollout(
                    &ee,
                    &mut |obs| run.policy.act(obs),
                    eval_len,
                    &mut stream,
                );
            }
            detail.per_agent.push(total / config.eval_seeds as f32);
        }
    }
    detail.fitness =
        detail.per_agent.iter().sum::<f32>() / detail.per_agent.len().max(1) as f32;
    detail
}

/// Plain fitness value (the objective SNES maximizes).
pub fn fitness(genome: &ParamVector, config: &MetaConfig, generation: usize, rng: &Rng) -> f32 {
    fitness_detail(genome, config, generation, rng).fitness
}

/// One meta-training history row (the deterministic log; wall time is kept
/// out so reruns are byte-identical).
#[derive(Debug, Clone)]
pub struct MetaGenRow {
    pub generation: usize,
    pub eval_length: usize,
    pub best_fitness: f32,
    pub mean_fitness: f32,
    pub nan_count: usize,
    pub inner_steps: usize,
    pub pop_mean_fitness: Option<f32>,
}

impl MetaGenRow {
    pub const CSV_HEADER: &'static str =
        "generation,eval_length,best_fitness,mean_fitness,nan_count,inner_steps,pop_mean_fitness";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.generation,
            self.eval_length,
            self.best_fitness,
            self.mean_fitness,
            self.nan_count,
            self.inner_steps,
            self.pop_mean_fitness.map_or(String::new(), |v| v.to_string()),
        )
    }
}

/// Progress snapshot passed to the per-generation callback.
pub struct MetaProgress<'a> {
    pub row: &'a MetaGenRow,
    pub best: &'a ScbCheckpoint,
    pub state: &'a SearchState,
}

/// Outcome of [`meta_train`].
pub struct MetaResult {
    pub best: ScbCheckpoint,
    pub history: Vec<MetaGenRow>,
    pub state: SearchState,
}

/// Runs the bi-level loop. `resume` continues from a stored search state and
/// generation. The callback fires once per generation; returning `false`
/// stops early (the result still carries the best checkpoint seen).
pub fn meta_train(
    config: &MetaConfig,
    seed: u64,
    resume: Option<(SearchState, ScbCheckpoint)>,
    mut on_generation: Option<&mut dyn FnMut(&MetaProgress<'_>) -> bool>,
) -> Result<MetaResult> {
    config.validate()?;
    let spec = config.scb_spec();
    let root = Rng::new(seed);

    let (mut state, mut best) = match resume {
        Some((state, best)) => {
            if state.dim() != spec.genome_len() {
                return Err(crate::Error::Config(
                    "resume state does not match the configured SCB architecture".into(),
                ));
            }
            (state, best)
        }
        None => {
            // random network init for the search mean, per-table init sigma
            let mu0 = ScbParams::init_random(&spec, &mut root.child(u64::MAX)).to_genome();
            let mut state = SearchState::new(mu0.0, config.sigma_init);
            state.sigma = vec![config.sigma_init; spec.genome_len()];
            let params = ScbParams::from_genome(&spec, &ParamVector(state.mu.clone()))?;
            let best = ScbCheckpoint {
                spec: spec.clone(),
                params,
                generation: 0,
                seed,
                fitness: FitnessStats { best: f32::NEG_INFINITY, mean: f32::NAN, nan_count: 0 },
                search: Some(SearchSnapshot {
                    mu: state.mu.clone(),
                    sigma: state.sigma.clone(),
                    generation: 0,
                }),
            };
            (state, best)
        }
    };

    let mut history = Vec::new();
    let start_gen = state.generation;
    for gen in start_gen..config.generations {
        let gen_rng = root.child(gen as u64);
        let pop = snes::ask(&state, config.popsize, &gen_rng.child(0));
        let eval_rng = gen_rng.child(1);
        let details: Vec<FitnessDetail> = pop
            .members
            .par_iter()
            .enumerate()
            .map(|(i, z)| fitness_detail(z, config, gen, &eval_rng.child(i as u64)))
            .collect();
        let raw: Vec<f32> = details.iter().map(|d| d.fitness).collect();
        let nan_count = raw.iter().filter(|f| f.is_nan()).count();
        let finite: Vec<f32> = raw.iter().copied().filter(|f| !f.is_nan()).collect();
        let (gen_best, gen_mean) = if finite.is_empty() {
            (f32::NAN, f32::NAN)
        } else {
            (
                finite.iter().copied().fold(f32::NEG_INFINITY, f32::max),
                finite.iter().sum::<f32>() / finite.len() as f32,
            )
        };
        for (z, &f) in pop.members.iter().zip(&raw) {
            if !f.is_nan() && f > best.fitness.best {
                best = ScbCheckpoint {
                    spec: spec.clone(),
                    params: ScbParams::from_genome(&spec, z)?,
                    generation: gen,
                    seed,
                    fitness: FitnessStats { best: f, mean: gen_mean, nan_count },
                    search: None,
                };
            }
        }

        // population-mean evaluation on its own cadence
        let pop_mean_fitness = if (gen + 1) % config.pop_mean_eval_every == 0 {
            let mean_cfg =
                MetaConfig { eval_seeds: config.eval_seeds_population_mean, ..config.clone() };
            let mu = ParamVector(state.mu.clone());
            Some(fitness(&mu, &mean_cfg, gen, &gen_rng.child(2)))
        } else {
            None
        };

        match snes::shape_fitness(&raw) {
            Ok(utilities) => {
                snes::tell(&mut state, &pop.noise, &utilities);
            }
            Err(_) => {
                // all-NaN generation: keep the distribution, advance the clock
                state.generation += 1;
            }
        }
        best.search = Some(SearchSnapshot {
            mu: state.mu.clone(),
            sigma: state.sigma.clone(),
            generation: state.generation,
        });

        let row = MetaGenRow {
            generation: gen,
            eval_length: eval_length(&config.curriculum, config.env_id.default_horizon(), gen),
            best_fitness: gen_best,
            mean_fitness: gen_mean,
            nan_count,
            inner_steps: details.iter().map(|d| d.inner_steps).sum(),
            pop_mean_fitness,
        };
        history.push(row);
        if let Some(cb) = on_generation.as_mut() {
            let row = history.last().unwrap();
            let progress = MetaProgress { row, best: &best, state: &state };
            if !cb(&progress) {
                break;
            }
        }
    }

    Ok(MetaResult { best, history, state })
}

/// A named ablation variant: parameterization letters T/TI/I plus a latent
/// distribution and curriculum choice (IC = I with a curriculum).
#[derive(Debug, Clone)]
pub struct AblationVariant {
    pub name: String,
    pub scb_mode: ScbMode,
    pub latent_dist: LatentDist,
    pub curriculum: Curriculum,
}

/// One row of the ablation comparison table.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub iqm: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub best_fitness: f32,
}

/// Runs meta-training once per variant under a shared budget and reports the
/// IQM (with bootstrap CI) of the final generation's finite member fitness.
pub fn ablation_suite(
    base: &MetaConfig,
    variants: &[AblationVariant],
    seed: u64,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for variant in variants {
        let cfg = MetaConfig {
            scb_mode: variant.scb_mode,
            latent_dist: variant.latent_dist,
            curriculum: variant.curriculum.clone(),
            ..base.clone()
        };
        let result = meta_train(&cfg, seed, None, None)?;
        // Sample distribution: the last quarter of generations' mean fitness,
        // a stable summary at small budgets.
        let mut final_fitness: Vec<f64> = Vec::new();
        for row in result.history.iter().rev().take((cfg.generations / 4).max(2)) {
            if !row.mean_fitness.is_nan() {
                final_fitness.push(row.mean_fitness as f64);
            }
        }
        let report = crate::analysis::iqm_ci(&final_fitness, 1000, &mut Rng::new(seed ^ 0xab1a))?;
        rows.push(AblationRow {
            name: variant.name.clone(),
            iqm: report.iqm,
            ci_low: report.ci_low,
            ci_high: report.ci_high,
            best_fitness: result.best.fitness.best,
        });
    }
    Ok(rows)
}
