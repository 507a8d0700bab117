//! `train`: one agent, either directly in an evaluation environment or
//! inside an SCB checkpoint; writes the training curve, a frozen-policy
//! evaluation curve, and the final EE evaluation.

use std::path::Path;

use anyhow::{bail, Context};
use banditforge_core::agents::{self, AlgoId};
use banditforge_core::checkpoint::ScbCheckpoint;
use banditforge_core::envs::{rollout, ClassicEnv, Env, EnvId};
use banditforge_core::scb::Scb;
use banditforge_core::Rng;

use crate::io::{CsvFile, RunManifest};

#[allow(clippy::too_many_arguments)]
pub fn run(
    env: Option<&str>,
    scb_path: Option<&Path>,
    algo: &str,
    hp: &str,
    steps: usize,
    seed: u64,
    out: &Path,
    eval_every: Option<usize>,
) -> anyhow::Result<u8> {
    let started = std::time::SystemTime::now();
    let algo: AlgoId = algo.parse().map_err(anyhow::Error::new)?;
    let fixed = match hp {
        "fixed" => true,
        "sampled" => false,
        other => bail!("--hp must be 'fixed' or 'sampled', got '{other}'"),
    };

    // exactly one training environment source
    let (train_env, env_id): (Box<dyn Env>, EnvId) = match (env, scb_path) {
        (Some(name), None) => {
            let id: EnvId = name.parse().map_err(anyhow::Error::new)?;
            (Box::new(ClassicEnv::new(id)), id)
        }
        (None, Some(path)) => {
            let ckpt = ScbCheckpoint::load(path).context("loading SCB checkpoint")?;
            let id = ckpt.spec.env_id;
            let scb = Scb::new(ckpt.spec, ckpt.params).map_err(anyhow::Error::new)?;
            (Box::new(scb), id)
        }
        _ => bail!("provide exactly one of --env or --scb"),
    };
    if !AlgoId::admissible(env_id).contains(&algo) {
        bail!(banditforge_core::Error::Config(format!(
            "{} does not support {}'s action space",
            algo.as_str(),
            env_id
        )));
    }

    std::fs::create_dir_all(out)?;
    let root = Rng::new(seed);
    let mut task = agents::task_for(env_id, algo, &mut root.child(0), fixed);
    task.total_steps = steps;

    // frozen-policy evaluation curve in the (SCB's) evaluation environment
    let cadence = eval_every.unwrap_or_else(|| (steps / 10).max(1));
    let ee = ClassicEnv::new(env_id);
    let horizon = env_id.default_horizon();
    let eval_root = root.child(1);
    let mut eval_curve = CsvFile::new("step,mean_return");
    let mut hook = |step: usize, policy: &agents::TrainedPolicy| {
        let mut total = 0.0f32;
        for s in 0..10u64 {
            let mut stream = eval_root.child(step as u64).child(s);
            total += rollout(&ee, &mut |obs| policy.act(obs), horizon, &mut stream);
        }
        eval_curve.row(&format!("{},{}", step, total / 10.0));
    };

    let run = agents::train_with_hook(
        &task,
        train_env.as_ref(),
        &mut root.child(2),
        Some((cadence, &mut hook)),
    )
    .map_err(anyhow::Error::new)?;

    let mut curve = CsvFile::new("step,episodic_return,loss");
    let mut losses = run.log.losses.iter().peekable();
    let mut last_loss = f32::NAN;
    for (step, ret) in &run.log.episodes {
        while let Some((ls, lv)) = losses.peek() {
            if ls <= step {
                last_loss = *lv;
                losses.next();
            } else {
                break;
            }
        }
        curve.row(&format!("{step},{ret},{last_loss}"));
    }
    let curve_path = out.join("curve.csv");
    curve.write_to(&curve_path)?;
    let eval_path = out.join("eval_curve.csv");
    eval_curve.write_to(&eval_path)?;

    // final EE evaluation of the frozen policy
    let mut final_eval = CsvFile::new("eval_seed,return");
    let final_root = root.child(3);
    let mut total = 0.0f32;
    let n_final = 50u64;
    for s in 0..n_final {
        let mut stream = final_root.child(s);
        let ret = rollout(&ee, &mut |obs| run.policy.act(obs), horizon, &mut stream);
        final_eval.row(&format!("{s},{ret}"));
        total += ret;
    }
    let final_path = out.join("final_eval.csv");
    final_eval.write_to(&final_path)?;

    let config = serde_json::json!({
        "env": env_id.as_str(),
        "scb": scb_path.map(|p| p.display().to_string()),
        "task": task,
        "steps": steps,
        "steps_consumed": run.log.steps_consumed,
        "step_deficit": run.log.step_deficit,
        "eval_every": cadence,
    });
    let mut manifest = RunManifest::new("train", config, seed);
    manifest.artifact(&curve_path);
    manifest.artifact(&eval_path);
    manifest.artifact(&final_path);
    manifest.write(out)?;
    crate::io::write_run_meta(out, started)?;

    eprintln!(
        "done: {} on {} for {} steps (deficit {}), final EE mean return {:.2}",
        algo.as_str(),
        env_id,
        run.log.steps_consumed,
        run.log.step_deficit,
        total / n_final as f32
    );
    Ok(0)
}
