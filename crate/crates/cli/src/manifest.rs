use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use osb_core::checkpoint::{read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Incomplete,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    pub config_hash: String,
    pub seed: u64,
    /// Files written by the stage, relative to the run directory.
    pub outputs: Vec<String>,
}

/// Run-level record: which stages finished, under which configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn load_or_new(dir: &Path) -> osb_core::Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if path.is_file() {
            read_json(path)
        } else {
            Ok(Self {
                version: env!("CARGO_PKG_VERSION").into(),
                stages: BTreeMap::new(),
            })
        }
    }

    pub fn save(&self, dir: &Path) -> osb_core::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(dir.join(MANIFEST_FILE), self)
    }
}

/// Marks `stage` incomplete on disk, runs `body`, then records its outputs as complete.
pub fn run_stage(
    dir: &Path,
    stage: &str,
    config_hash: &str,
    seed: u64,
    body: impl FnOnce() -> anyhow::Result<Vec<PathBuf>>,
) -> anyhow::Result<()> {
    let mut m = RunManifest::load_or_new(dir)?;
    let mut record = StageRecord {
        status: StageStatus::Incomplete,
        config_hash: config_hash.into(),
        seed,
        outputs: vec![],
    };
    m.stages.insert(stage.into(), record.clone());
    m.save(dir)?;
    let outputs = body()?;
    let mut rel: Vec<String> = outputs
        .iter()
        .map(|p| p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/"))
        .collect();
    rel.sort();
    record.status = StageStatus::Complete;
    record.outputs = rel;
    let mut m = RunManifest::load_or_new(dir)?;
    m.stages.insert(stage.into(), record);
    m.save(dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_stage_stays_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_stage(dir.path(), "train", "abc", 1, || anyhow::bail!("boom"));
        assert!(r.is_err());
        let m = RunManifest::load_or_new(dir.path()).unwrap();
        assert_eq!(m.stages["train"].status, StageStatus::Incomplete);
        run_stage(dir.path(), "train", "abc", 1, || Ok(vec![dir.path().join("model/x")])).unwrap();
        let m = RunManifest::load_or_new(dir.path()).unwrap();
        assert_eq!(m.stages["train"].status, StageStatus::Complete);
        assert_eq!(m.stages["train"].outputs, vec!["model/x".to_string()]);
    }
}
