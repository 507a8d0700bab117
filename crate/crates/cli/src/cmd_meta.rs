//! `meta-train`: run the bi-level loop, streaming the history CSV and
//! checkpointing the best SCB as the run progresses.

use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use banditforge_core::checkpoint::ScbCheckpoint;
use banditforge_core::meta::{self, MetaGenRow, MetaProgress};
use banditforge_core::snes::SearchState;

use crate::io::{atomic_write, CsvFile, RunManifest};
use crate::{EXIT_NUMERICAL};

pub fn run(
    config_path: &Path,
    seed: u64,
    out: &Path,
    resume: Option<&Path>,
) -> anyhow::Result<u8> {
    let started = std::time::SystemTime::now();
    let cfg = crate::config::load_meta_config(config_path)?;
    std::fs::create_dir_all(out)?;

    let resume_state = match resume {
        Some(path) => {
            let ckpt = ScbCheckpoint::load(path).context("loading resume checkpoint")?;
            let snapshot = ckpt
                .search
                .clone()
                .ok_or_else(|| anyhow::anyhow!("checkpoint carries no search state"))?;
            let mut state = SearchState::new(snapshot.mu, cfg.sigma_init);
            state.sigma = snapshot.sigma;
            state.generation = snapshot.generation;
            Some((state, ckpt))
        }
        None => None,
    };

    let history_path = out.join("history.csv");
    let timing_path = out.join("timing.csv");
    let ckpt_path = out.join("best.ckpt");
    let mut history = CsvFile::new(MetaGenRow::CSV_HEADER);
    let mut timing = CsvFile::new("generation,wall_ms");
    let mut gen_clock = Instant::now();
    let checkpoint_every = cfg.pop_mean_eval_every.max(1);

    let mut callback = |p: &MetaProgress<'_>| -> bool {
        history.row(&p.row.csv_row());
        timing.row(&format!("{},{}", p.row.generation, gen_clock.elapsed().as_millis()));
        gen_clock = Instant::now();
        eprintln!(
            "gen {:>4}  eval_len {:>4}  best {:>10.3}  mean {:>10.3}  nan {}",
            p.row.generation,
            p.row.eval_length,
            p.row.best_fitness,
            p.row.mean_fitness,
            p.row.nan_count
        );
        // keep the newest state on disk so interrupts lose at most a cadence
        if (p.row.generation + 1) % checkpoint_every == 0 {
            let mut ckpt = p.best.clone();
            if let Some(s) = ckpt.search.as_mut() {
                s.mu = p.state.mu.clone();
                s.sigma = p.state.sigma.clone();
                s.generation = p.state.generation;
            }
            if let Err(e) = ckpt.save(&ckpt_path) {
                eprintln!("warning: checkpoint write failed: {e}");
            }
        }
        true
    };

    let result = meta::meta_train(&cfg, seed, resume_state, Some(&mut callback))
        .map_err(anyhow::Error::new)?;

    history.write_to(&history_path)?;
    timing.write_to(&timing_path)?;
    result.best.save(&ckpt_path).map_err(anyhow::Error::new)?;

    // resolved config for byte-exact reruns
    let config_json = serde_json::to_value(&cfg)?;
    atomic_write(&out.join("resolved_config.json"), &serde_json::to_vec_pretty(&config_json)?)?;

    let mut manifest = RunManifest::new("meta-train", config_json, seed);
    manifest.artifact(&history_path);
    manifest.artifact(&timing_path);
    manifest.artifact(&ckpt_path);
    manifest.write(out)?;
    crate::io::write_run_meta(out, started)?;

    let all_nan = result.history.iter().all(|r| r.nan_count >= cfg.popsize);
    if all_nan || !result.best.fitness.best.is_finite() {
        eprintln!("error: meta-training produced no finite fitness (all-NaN)");
        return Ok(EXIT_NUMERICAL);
    }
    eprintln!(
        "done: best fitness {:.3} at generation {} ({} generations logged)",
        result.best.fitness.best,
        result.best.generation,
        result.history.len()
    );
    Ok(0)
}
