//! `analyze`: interpretability artifacts from an SCB checkpoint.

use std::path::Path;

use anyhow::{bail, Context};
use banditforge_core::analysis::{self, GridDim, StateGrid};
use banditforge_core::checkpoint::ScbCheckpoint;
use banditforge_core::envs::{rollout, Action, ClassicEnv};
use banditforge_core::scb::Scb;
use banditforge_core::Rng;

use crate::io::{CsvFile, RunManifest};

pub fn run(
    scb_path: &Path,
    what: &str,
    grid_spec: Option<&str>,
    out: &Path,
    seed: u64,
) -> anyhow::Result<u8> {
    let started = std::time::SystemTime::now();
    let ckpt = ScbCheckpoint::load(scb_path).context("loading SCB checkpoint")?;
    let env_id = ckpt.spec.env_id;
    let scb = Scb::new(ckpt.spec, ckpt.params).map_err(anyhow::Error::new)?;
    std::fs::create_dir_all(out)?;

    let artifact = match what {
        "action-map" => {
            let grid = match grid_spec {
                Some(spec) => parse_grid(spec, env_id.obs_dim())?,
                None => StateGrid::default_for(env_id, 21),
            };
            let map = analysis::optimal_action_map(&scb, &grid).map_err(anyhow::Error::new)?;
            let dims: Vec<String> =
                (0..env_id.obs_dim()).map(|i| format!("state_{i}")).collect();
            let mut csv = CsvFile::new(&format!("{},action", dims.join(",")));
            for (state, action) in map {
                let coords: Vec<String> = state.iter().map(|v| v.to_string()).collect();
                let a = match action {
                    Action::Discrete(a) => a.to_string(),
                    Action::Continuous(v) => {
                        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
                    }
                };
                csv.row(&format!("{},{}", coords.join(","), a));
            }
            let path = out.join("action_map.csv");
            csv.write_to(&path)?;
            path
        }
        "importance" => {
            let mut rng = Rng::new(seed);
            let report =
                analysis::feature_importance_default(&scb, &mut rng).map_err(anyhow::Error::new)?;
            if report.degenerate {
                eprintln!("warning: reward variance is zero everywhere; emitting uniform scores");
            }
            let mut csv = CsvFile::new("dim,score");
            for (i, v) in report.importance.iter().enumerate() {
                csv.row(&format!("{i},{v}"));
            }
            let path = out.join("importance.csv");
            csv.write_to(&path)?;
            path
        }
        "cb-optimal" => {
            // rejects T/TI checkpoints: the return-equals-reward identity
            // behind the optimal policy holds only for CBs
            let policy = analysis::cb_optimal_policy(&scb).map_err(anyhow::Error::new)?;
            let ee = ClassicEnv::new(env_id);
            let horizon = env_id.default_horizon();
            let root = Rng::new(seed);
            let mut csv = CsvFile::new("eval_seed,return");
            let mut returns = Vec::new();
            for s in 0..50u64 {
                let mut stream = root.child(s);
                let ret = rollout(&ee, &mut |obs| policy.act(obs), horizon, &mut stream);
                csv.row(&format!("{s},{ret}"));
                returns.push(ret as f64);
            }
            let path = out.join("cb_optimal_returns.csv");
            csv.write_to(&path)?;
            let report = analysis::iqm_ci(&returns, 1000, &mut Rng::new(seed ^ 0xc1))
                .map_err(anyhow::Error::new)?;
            eprintln!(
                "cb-optimal policy on {env_id}: IQM {:.2} [{:.2}, {:.2}] over 50 seeds",
                report.iqm, report.ci_low, report.ci_high
            );
            path
        }
        other => bail!("--what must be action-map, importance, or cb-optimal; got '{other}'"),
    };

    let config = serde_json::json!({
        "scb": scb_path.display().to_string(),
        "what": what,
        "grid": grid_spec,
    });
    let mut manifest = RunManifest::new("analyze", config, seed);
    manifest.artifact(&artifact);
    manifest.write(out)?;
    crate::io::write_run_meta(out, started)?;
    Ok(0)
}

/// Grid spec: one comma-separated entry per observation dimension, each
/// either `lo:hi:n` (swept) or a bare number (fixed).
fn parse_grid(spec: &str, obs_dim: usize) -> anyhow::Result<StateGrid> {
    let entries: Vec<&str> = spec.split(',').collect();
    if entries.len() != obs_dim {
        bail!("grid spec has {} entries, observation has {obs_dim} dims", entries.len());
    }
    let mut dims = Vec::with_capacity(entries.len());
    for e in entries {
        let parts: Vec<&str> = e.split(':').collect();
        match parts.as_slice() {
            [v] => dims.push(GridDim::Fixed(v.trim().parse::<f32>().map_err(|_| {
                anyhow::anyhow!("grid entry '{e}' is not a number")
            })?)),
            [lo, hi, n] => dims.push(GridDim::Sweep {
                lo: lo.trim().parse().map_err(|_| anyhow::anyhow!("bad grid lo in '{e}'"))?,
                hi: hi.trim().parse().map_err(|_| anyhow::anyhow!("bad grid hi in '{e}'"))?,
                n: n.trim().parse().map_err(|_| anyhow::anyhow!("bad grid n in '{e}'"))?,
            }),
            _ => bail!("grid entry '{e}' must be 'lo:hi:n' or a fixed value"),
        }
    }
    let grid = StateGrid { dims };
    grid.validate().map_err(anyhow::Error::new)?;
    Ok(grid)
}
