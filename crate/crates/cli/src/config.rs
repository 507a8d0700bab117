//! TOML experiment configuration: every field optional except `env`, with
//! defaults taken from the desk-scale per-environment tables. CLI flags form
//! the override layer; the fully resolved config lands in the run manifest.

use std::path::Path;

use anyhow::{bail, Context};
use banditforge_core::envs::EnvId;
use banditforge_core::meta::{Curriculum, CurriculumKind, HpSampling, MetaConfig, MultiAlgoMode};
use banditforge_core::scb::{LatentDist, ScbMode};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub env: String,
    pub popsize: Option<usize>,
    pub generations: Option<usize>,
    pub num_rollouts: Option<usize>,
    pub eval_seeds: Option<usize>,
    pub eval_seeds_population_mean: Option<usize>,
    pub multi_algo_mode: Option<MultiAlgoMode>,
    pub hp_sampling: Option<HpSampling>,
    pub scb_mode: Option<ScbMode>,
    pub latent_dist: Option<LatentDist>,
    pub total_agent_steps: Option<usize>,
    pub sigma_init: Option<f32>,
    pub pop_mean_eval_every: Option<usize>,
    pub max_episode_len: Option<usize>,
    pub curriculum: Option<FileCurriculum>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileCurriculum {
    pub kind: CurriculumKind,
    pub init_len: Option<usize>,
    pub final_len: Option<usize>,
    pub begin_gen: Option<usize>,
    pub transition_gens: Option<usize>,
}

/// Loads and resolves a config file onto the desk-scale defaults.
pub fn load_meta_config(path: &Path) -> anyhow::Result<MetaConfig> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let file: FileConfig = toml::from_str(&raw).context("parsing config")?;
    resolve(file)
}

pub fn resolve(file: FileConfig) -> anyhow::Result<MetaConfig> {
    let env_id: EnvId = file
        .env
        .parse()
        .map_err(|e| anyhow::Error::new(e).context("config field 'env'"))?;
    let mut cfg = MetaConfig::desk_default(env_id);
    if let Some(v) = file.popsize {
        cfg.popsize = v;
    }
    if let Some(v) = file.generations {
        cfg.generations = v;
    }
    if let Some(v) = file.num_rollouts {
        cfg.num_rollouts = v;
    }
    if let Some(v) = file.eval_seeds {
        cfg.eval_seeds = v;
    }
    if let Some(v) = file.eval_seeds_population_mean {
        cfg.eval_seeds_population_mean = v;
    }
    if let Some(v) = file.multi_algo_mode {
        cfg.multi_algo_mode = v;
    }
    if let Some(v) = file.hp_sampling {
        cfg.hp_sampling = v;
    }
    if let Some(v) = file.scb_mode {
        cfg.scb_mode = v;
    }
    if let Some(v) = file.latent_dist {
        cfg.latent_dist = v;
    }
    if let Some(v) = file.total_agent_steps {
        cfg.total_agent_steps = v;
    }
    if let Some(v) = file.sigma_init {
        cfg.sigma_init = v;
    }
    if let Some(v) = file.pop_mean_eval_every {
        cfg.pop_mean_eval_every = v;
    }
    if file.max_episode_len.is_some() {
        cfg.max_episode_len = file.max_episode_len;
    }
    if let Some(c) = file.curriculum {
        let defaults = match c.kind {
            CurriculumKind::None => Curriculum::none(),
            CurriculumKind::Linear => Curriculum::mountain_car(),
        };
        cfg.curriculum = Curriculum {
            kind: c.kind,
            init_len: c.init_len.unwrap_or(defaults.init_len),
            final_len: c.final_len.unwrap_or(defaults.final_len),
            begin_gen: c.begin_gen.unwrap_or(defaults.begin_gen),
            transition_gens: c.transition_gens.unwrap_or(defaults.transition_gens),
        };
    }
    if let Err(e) = cfg.validate() {
        bail!(e);
    }
    Ok(cfg)
}
