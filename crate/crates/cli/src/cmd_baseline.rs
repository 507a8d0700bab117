//! `baseline`: component-replacement suite around a meta-trained SCB.

use std::path::Path;

use anyhow::{bail, Context};
use banditforge_core::agents::AlgoId;
use banditforge_core::baselines::{
    baseline_suite, default_expert_budget, train_expert, ExpertBundle, InitKind, RewardKind,
    SuiteCell,
};
use banditforge_core::checkpoint::ScbCheckpoint;
use banditforge_core::envs::EnvId;
use banditforge_core::scb::Scb;
use banditforge_core::Rng;

use crate::io::{CsvFile, RunManifest};

#[allow(clippy::too_many_arguments)]
pub fn run(
    env: &str,
    scb_path: &Path,
    cells: &str,
    budget: usize,
    expert_path: Option<&Path>,
    algos: &str,
    runs: usize,
    seed: u64,
    out: &Path,
) -> anyhow::Result<u8> {
    let started = std::time::SystemTime::now();
    let env_id: EnvId = env.parse().map_err(anyhow::Error::new)?;
    let ckpt = ScbCheckpoint::load(scb_path).context("loading SCB checkpoint")?;
    if ckpt.spec.env_id != env_id {
        bail!(banditforge_core::Error::Config(format!(
            "checkpoint is for {}, not {env_id}",
            ckpt.spec.env_id
        )));
    }
    let scb = Scb::new(ckpt.spec, ckpt.params).map_err(anyhow::Error::new)?;

    let cells = parse_cells(cells)?;
    let algos: Vec<AlgoId> = algos
        .split(',')
        .map(|a| a.trim().parse::<AlgoId>().map_err(anyhow::Error::new))
        .collect::<anyhow::Result<_>>()?;
    for a in &algos {
        if !AlgoId::admissible(env_id).contains(a) {
            bail!(banditforge_core::Error::Config(format!(
                "{} does not support {env_id}",
                a.as_str()
            )));
        }
    }

    // load or train the expert on demand
    let expert = match expert_path {
        Some(path) if path.exists() => {
            let e = ExpertBundle::load(path).context("loading expert bundle")?;
            if e.env_id != env_id {
                bail!(banditforge_core::Error::Config("expert is for a different env".into()));
            }
            e
        }
        maybe_path => {
            eprintln!("training an SAC expert for {env_id} (no bundle supplied)");
            let e = train_expert(env_id, default_expert_budget(env_id), &mut Rng::new(seed ^ 0xe))
                .map_err(anyhow::Error::new)?;
            eprintln!(
                "expert IQM {:.1} ({})",
                e.iqm_return,
                if e.desk_grade { "desk-grade" } else { "full band" }
            );
            if let Some(path) = maybe_path {
                e.save(path).map_err(anyhow::Error::new)?;
            }
            e
        }
    };

    std::fs::create_dir_all(out)?;
    let rows = baseline_suite(&scb, &expert, &cells, &algos, runs, budget, seed)
        .map_err(anyhow::Error::new)?;
    let mut csv = CsvFile::new("reward_kind,init_kind,algo,iqm,ci_low,ci_high");
    for r in &rows {
        csv.row(&format!(
            "{},{},{},{},{},{}",
            kind_str(r.reward_kind),
            init_str(r.init_kind),
            r.algo,
            r.iqm,
            r.ci_low,
            r.ci_high
        ));
        eprintln!(
            "{:>15} x {:>13} [{:>4}]  IQM {:.3} [{:.3}, {:.3}]",
            kind_str(r.reward_kind),
            init_str(r.init_kind),
            r.algo,
            r.iqm,
            r.ci_low,
            r.ci_high
        );
    }
    let path = out.join("suite.csv");
    csv.write_to(&path)?;

    let config = serde_json::json!({
        "env": env_id.as_str(),
        "scb": scb_path.display().to_string(),
        "budget": budget,
        "runs": runs,
        "expert_iqm": expert.iqm_return,
        "expert_desk_grade": expert.desk_grade,
    });
    let mut manifest = RunManifest::new("baseline", config, seed);
    manifest.artifact(&path);
    manifest.write(out)?;
    crate::io::write_run_meta(out, started)?;
    Ok(0)
}

fn parse_cells(spec: &str) -> anyhow::Result<Vec<SuiteCell>> {
    let mut cells = Vec::new();
    for entry in spec.split(',') {
        let Some((reward, init)) = entry.trim().split_once(':') else {
            bail!(banditforge_core::Error::Config(format!(
                "cell '{entry}' must be reward:init"
            )));
        };
        cells.push(SuiteCell {
            reward_kind: reward.trim().parse().map_err(anyhow::Error::new)?,
            init_kind: init.trim().parse().map_err(anyhow::Error::new)?,
        });
    }
    if cells.is_empty() {
        bail!(banditforge_core::Error::Config("no cells requested".into()));
    }
    Ok(cells)
}

fn kind_str(k: RewardKind) -> &'static str {
    match k {
        RewardKind::Synthetic => "synthetic",
        RewardKind::BcKl => "bc_kl",
        RewardKind::ActionDistance => "action_distance",
        RewardKind::ExpertQ => "expert_q",
    }
}

fn init_str(k: InitKind) -> &'static str {
    match k {
        InitKind::Synthetic => "synthetic",
        InitKind::ExpertStates => "expert_states",
    }
}
