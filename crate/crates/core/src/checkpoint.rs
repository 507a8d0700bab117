//! On-disk container shared by SCB checkpoints and expert bundles.
//!
//! Layout: a single-line UTF-8 JSON manifest, a newline, then a little-endian
//! 32-bit float blob. The manifest records the blob's byte offset, the total
//! parameter count, and named sections laid out consecutively in the blob.
//! Files are written to a temporary sibling and renamed into place, so a
//! partially-written checkpoint is never loadable.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::envs::EnvId;
use crate::nn::ParamVector;
use crate::scb::{ScbParams, ScbSpec};
use crate::{Error, Result};

pub const SCB_FORMAT: &str = "scb-v1";
pub const EXPERT_FORMAT: &str = "expert-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SectionMeta {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    blob_offset: usize,
    param_count: usize,
    sections: Vec<SectionMeta>,
    payload: serde_json::Value,
}

/// A loaded container: format tag, payload JSON, and named float sections.
pub struct Container {
    pub format: String,
    pub payload: serde_json::Value,
    sections: Vec<(String, Vec<f32>)>,
}

impl Container {
    pub fn section(&self, name: &str) -> Result<&[f32]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Format(format!("missing section '{name}'")))
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|(n, _)| n == name)
    }

    pub fn payload_as<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.payload.clone())
            .map_err(|e| Error::Format(format!("payload decode: {e}")))
    }
}

/// Writes a container atomically (write-then-rename).
pub fn save<P: Serialize>(
    path: &Path,
    format: &str,
    payload: &P,
    sections: &[(&str, &[f32])],
) -> Result<()> {
    let payload =
        serde_json::to_value(payload).map_err(|e| Error::Format(format!("payload encode: {e}")))?;
    let section_meta: Vec<SectionMeta> =
        sections.iter().map(|(n, v)| SectionMeta { name: (*n).to_string(), len: v.len() }).collect();
    let param_count: usize = sections.iter().map(|(_, v)| v.len()).sum();
    let mut manifest = Manifest {
        format: format.to_string(),
        blob_offset: 0,
        param_count,
        sections: section_meta,
        payload,
    };
    // The offset field changes the manifest's own length; iterate to the
    // fixed point (the digit count stabilizes within a few rounds).
    let mut encoded = serde_json::to_vec(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    loop {
        let offset = encoded.len() + 1; // manifest + newline
        if manifest.blob_offset == offset {
            break;
        }
        manifest.blob_offset = offset;
        encoded = serde_json::to_vec(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    }

    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&encoded)?;
    tmp.write_all(b"\n")?;
    for (_, values) in sections {
        for v in *values {
            tmp.write_all(&v.to_le_bytes())?;
        }
    }
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Loads and validates a container.
pub fn load(path: &Path) -> Result<Container> {
    let bytes = std::fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("no manifest terminator".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Format(format!("manifest decode: {e}")))?;
    if manifest.blob_offset != newline + 1 {
        return Err(Error::Format(format!(
            "blob offset {} does not match manifest end {}",
            manifest.blob_offset,
            newline + 1
        )));
    }
    let blob = &bytes[manifest.blob_offset..];
    if blob.len() != manifest.param_count * 4 {
        return Err(Error::Format(format!(
            "blob holds {} bytes, expected {} params",
            blob.len(),
            manifest.param_count
        )));
    }
    let mut sections = Vec::with_capacity(manifest.sections.len());
    let mut cursor = 0usize;
    for meta in &manifest.sections {
        let raw = &blob[cursor * 4..(cursor + meta.len) * 4];
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        sections.push((meta.name.clone(), values));
        cursor += meta.len;
    }
    if cursor != manifest.param_count {
        return Err(Error::Format("section lengths do not cover the blob".into()));
    }
    Ok(Container { format: manifest.format, payload: manifest.payload, sections })
}

/// Fitness statistics recorded in SCB checkpoint manifests.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FitnessStats {
    pub best: f32,
    pub mean: f32,
    pub nan_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScbPayload {
    env_id: EnvId,
    spec: ScbSpec,
    generation: usize,
    seed: u64,
    fitness: FitnessStats,
    #[serde(default)]
    search_generation: Option<usize>,
}

/// SNES search distribution stored alongside the best genome so meta-training
/// can resume at the recorded generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSnapshot {
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
    pub generation: usize,
}

/// An SCB checkpoint: the environment description, the best genome, and
/// (optionally) the SNES search distribution for resuming meta-training.
#[derive(Debug, Clone)]
pub struct ScbCheckpoint {
    pub spec: ScbSpec,
    pub params: ScbParams,
    pub generation: usize,
    pub seed: u64,
    pub fitness: FitnessStats,
    pub search: Option<SearchSnapshot>,
}

impl ScbCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let payload = ScbPayload {
            env_id: self.spec.env_id,
            spec: self.spec.clone(),
            generation: self.generation,
            seed: self.seed,
            fitness: self.fitness,
            search_generation: self.search.as_ref().map(|s| s.generation),
        };
        let mut sections: Vec<(&str, &[f32])> = vec![
            ("init_params", self.params.init_params.as_slice()),
            ("net_params", self.params.net_params.as_slice()),
        ];
        if let Some(snapshot) = &self.search {
            sections.push(("search_mu", snapshot.mu.as_slice()));
            sections.push(("search_sigma", snapshot.sigma.as_slice()));
        }
        save(path, SCB_FORMAT, &payload, &sections)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = load(path)?;
        if c.format != SCB_FORMAT {
            return Err(Error::Format(format!("expected {SCB_FORMAT}, found {}", c.format)));
        }
        let payload: ScbPayload = c.payload_as()?;
        let params = ScbParams {
            init_params: ParamVector(c.section("init_params")?.to_vec()),
            net_params: ParamVector(c.section("net_params")?.to_vec()),
        };
        if params.init_params.len() != payload.spec.init_param_count()
            || params.net_params.len() != payload.spec.net.param_count()
        {
            return Err(Error::Format("checkpoint params do not match spec".into()));
        }
        let search = if c.has_section("search_mu") {
            Some(SearchSnapshot {
                mu: c.section("search_mu")?.to_vec(),
                sigma: c.section("search_sigma")?.to_vec(),
                generation: payload.search_generation.unwrap_or(payload.generation),
            })
        } else {
            None
        };
        Ok(ScbCheckpoint {
            spec: payload.spec,
            params,
            generation: payload.generation,
            seed: payload.seed,
            fitness: payload.fitness,
            search,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Action, Env};
    use crate::scb::Scb;
    use crate::Rng;

    #[test]
    fn container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        let payload = serde_json::json!({"kind": "probe", "n": 3});
        let a = vec![1.0f32, -2.5, 3.25];
        let b = vec![0.0f32; 7];
        save(&path, "scb-v1", &payload, &[("a", &a), ("b", &b)]).unwrap();
        let c = load(&path).unwrap();
        assert_eq!(c.format, "scb-v1");
        assert_eq!(c.section("a").unwrap(), a.as_slice());
        assert_eq!(c.section("b").unwrap(), b.as_slice());
        assert!(c.section("missing").is_err());
        assert_eq!(c.payload["n"], 3);
    }

    #[test]
    fn scb_checkpoint_reproduces_rewards() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cartpole.ckpt");
        let spec = crate::scb::ScbSpec::cb(crate::envs::EnvId::CartPoleV1);
        let mut rng = Rng::new(42);
        let params = crate::scb::ScbParams::init_random(&spec, &mut rng);
        let ckpt = ScbCheckpoint {
            spec: spec.clone(),
            params: params.clone(),
            generation: 7,
            seed: 42,
            fitness: FitnessStats { best: 1.0, mean: 0.5, nan_count: 0 },
            search: Some(SearchSnapshot {
                mu: vec![0.1; spec.genome_len()],
                sigma: vec![0.05; spec.genome_len()],
                generation: 7,
            }),
        };
        ckpt.save(&path).unwrap();
        let loaded = ScbCheckpoint::load(&path).unwrap();
        assert_eq!(loaded.generation, 7);
        assert_eq!(loaded.params, params);
        assert_eq!(loaded.search, ckpt.search);

        // identical (z, action) probes produce identical rewards before/after
        let orig = Scb::new(spec.clone(), params).unwrap();
        let back = Scb::new(loaded.spec, loaded.params).unwrap();
        let probe_root = Rng::new(1234);
        for k in 0..1000u64 {
            let mut r1 = probe_root.child(k);
            let mut r2 = probe_root.child(k);
            let s1 = orig.reset(&mut r1);
            let s2 = back.reset(&mut r2);
            assert_eq!(s1.obs, s2.obs);
            let a = Action::Discrete((k % 2) as usize);
            let (_, rew1) = orig.step(&s1, &a).unwrap();
            let (_, rew2) = back.step(&s2, &a).unwrap();
            assert_eq!(rew1.to_bits(), rew2.to_bits(), "probe {k}");
        }
    }

    #[test]
    fn truncated_files_never_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let a = vec![1.0f32; 16];
        save(&path, "scb-v1", &serde_json::json!({}), &[("a", &a)]).unwrap();
        let full = std::fs::read(&path).unwrap();
        // chop the blob
        std::fs::write(&path, &full[..full.len() - 5]).unwrap();
        assert!(load(&path).is_err(), "truncated blob must fail to load");
        // corrupt the manifest
        std::fs::write(&path, &full[3..]).unwrap();
        assert!(load(&path).is_err(), "corrupt manifest must fail to load");
    }
}
