use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use osb_core::clickme::ReliabilityParams;
use osb_core::critics::{ContrastiveHyper, CriticConfig, EpisodeHyper};
use osb_core::dataset::{FixtureParams, PipelineParams};
use osb_core::diffusion::ScheduleSpec;
use osb_core::models::{DenoiserConfig, TrainHyper};

/// Bad configuration or arguments; reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub fixture: FixtureParams,
    pub pipeline: PipelineParams,
    /// Concepts used for training; the rest are held out for evaluation.
    pub n_train: usize,
    /// Optional file of concept ids (one per line) to drop before splitting.
    pub exclude: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            fixture: FixtureParams::default(),
            pipeline: PipelineParams::default(),
            n_train: 6,
            exclude: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CriticsSection {
    pub config: CriticConfig,
    pub contrastive: ContrastiveHyper,
    pub episodes: EpisodeHyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub gammas: Vec<f64>,
    pub samples_per_concept: usize,
    pub n_bins: usize,
    pub per_bin: usize,
    /// Clamp the implied clean image during sampling.
    pub clip_x0: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            gammas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.5, 2.0],
            samples_per_concept: 20,
            n_bins: 10,
            per_bin: 50,
            clip_x0: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSection,
    pub model: DenoiserConfig,
    pub schedule: ScheduleSpec,
    pub train: TrainHyper,
    pub critics: CriticsSection,
    pub metrics: MetricsSection,
    pub reliability: ReliabilityParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            dataset: DatasetSection::default(),
            model: DenoiserConfig::default(),
            schedule: ScheduleSpec::paper_default(),
            train: TrainHyper::default(),
            critics: CriticsSection::default(),
            metrics: MetricsSection::default(),
            reliability: ReliabilityParams::default(),
        }
    }
}

pub const ENV_PREFIX: &str = "OSB_";

/// Applies `OSB_<SECTION>__<KEY>[__<KEY>...]=<json>` overrides. Values that do
/// not parse as JSON are taken as strings.
pub fn apply_env_overrides(doc: &mut Value, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.contains("__"))
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(ConfigError(format!("malformed override variable {key}")));
        }
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        let mut node = &mut *doc;
        for seg in &path[..path.len() - 1] {
            node = node
                .as_object_mut()
                .ok_or_else(|| ConfigError(format!("{key}: {seg} is not a section")))?
                .entry(seg.clone())
                .or_insert_with(|| Value::Object(Default::default()));
        }
        node.as_object_mut()
            .ok_or_else(|| ConfigError(format!("{key} does not name a section field")))?
            .insert(path[path.len() - 1].clone(), value);
    }
    Ok(())
}

impl ExperimentConfig {
    /// Defaults, then the JSON file, then environment overrides.
    pub fn load(path: Option<&Path>, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigError> {
        let mut doc = serde_json::to_value(ExperimentConfig::default()).expect("default config serializes");
        if let Some(p) = path {
            let text =
                std::fs::read_to_string(p).map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
            let file: Value =
                serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
            merge(&mut doc, file);
        }
        apply_env_overrides(&mut doc, vars)?;
        let cfg: ExperimentConfig = serde_json::from_value(doc).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |r: osb_core::Result<()>| r.map_err(|e| ConfigError(e.to_string()));
        wrap(self.dataset.pipeline.validate())?;
        wrap(self.model.validate())?;
        wrap(self.train.validate())?;
        wrap(self.critics.config.validate())?;
        wrap(self.schedule.build().map(|_| ()))?;
        if self.metrics.gammas.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(ConfigError("guidance scales must be finite and nonnegative".into()));
        }
        if self.metrics.samples_per_concept == 0 {
            return Err(ConfigError("samples_per_concept must be positive".into()));
        }
        if self.model.image_size != self.dataset.fixture.size {
            return Err(ConfigError(format!(
                "model image_size {} differs from dataset size {}",
                self.model.image_size, self.dataset.fixture.size
            )));
        }
        if self.dataset.pipeline.image_size != self.model.image_size {
            return Err(ConfigError(format!(
                "pipeline image_size {} differs from model image_size {}",
                self.dataset.pipeline.image_size, self.model.image_size
            )));
        }
        if self.critics.config.image_size != self.model.image_size {
            return Err(ConfigError(format!(
                "critic image_size {} differs from model image_size {}",
                self.critics.config.image_size, self.model.image_size
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded. The run directory is
    /// not part of the experiment and is left out.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&ExperimentConfig {
            out: PathBuf::new(),
            ..self.clone()
        })
        .expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Recursively overlays `patch` onto `base`; objects merge, anything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = ExperimentConfig::load(None, vec![]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn env_overrides_nested_fields() {
        let cfg = ExperimentConfig::load(
            None,
            vars(&[("OSB_TRAIN__STEPS", "7"), ("OSB_METRICS__GAMMAS", "[0, 1]"), ("OSB_SEED", "9")]),
        )
        .unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.metrics.gammas, vec![0.0, 1.0]);
        // plain variables are left to the flag parser
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::load(None, vars(&[("OSB_METRICS__GAMMA_LIST", "[1]")])).is_err());
        assert!(ExperimentConfig::load(None, vars(&[("OSB_METRICS__GAMMAS", "[-1]")])).is_err());
        assert!(ExperimentConfig::load(None, vars(&[("OSB_MODEL__IMAGE_SIZE", "32")])).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
