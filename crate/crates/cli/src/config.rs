//! Run configuration: one JSON tree with a default for every key.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vit_hgr::baseline::BaselineConfig;
use vit_hgr::data::SyntheticSpec;
use vit_hgr::segment::SegmentConfig;
use vit_hgr::signal::SignalConfig;
use vit_hgr::train::TrainConfig;
use vit_hgr::vit::{ModelId, VitConfig, PRESET_PATCH_SIDE};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset container read by `preprocess`, `train` and `compare`.
    pub data: Option<PathBuf>,
    /// Output directory (or file, for `synth` and `import`).
    pub output: Option<PathBuf>,
    /// Master seed; drives training and synthetic generation.
    pub seed: u64,
    /// Folds trained concurrently.
    pub jobs: usize,
    /// Preset row used unless `vit` gives an explicit architecture.
    pub model: ModelId,
    pub vit: Option<VitConfig>,
    /// Replace every subject's labels with a seeded permutation.
    pub shuffle_labels: bool,
    pub signal: SignalConfig,
    pub segment: SegmentConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            output: None,
            seed: 0,
            jobs: 1,
            model: ModelId::III,
            vit: None,
            shuffle_labels: false,
            signal: SignalConfig::default(),
            segment: SegmentConfig::default(),
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

fn has_key(value: &Value, path: &[&str]) -> bool {
    path.iter()
        .try_fold(value, |v, k| v.get(k))
        .is_some()
}

/// Values given on the command line; `None` keeps the file or default value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub output: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub model: Option<ModelId>,
}

impl RunConfig {
    /// Loads `path` (or defaults), applies overrides and resolves the seeds.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let (mut config, raw) = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                let raw: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
                let config: RunConfig = serde_json::from_value(raw.clone())
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
                (config, raw)
            }
            None => (RunConfig::default(), Value::Null),
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        // nested seeds may be spelled out only if they agree with the master seed
        for (section, value) in [("train", config.train.seed), ("synthetic", config.synthetic.seed)] {
            if has_key(&raw, &[section, "seed"]) && value != config.seed {
                return Err(CliError::Usage(format!(
                    "{section}.seed = {value} conflicts with seed = {}",
                    config.seed
                )));
            }
        }
        config.train.seed = config.seed;
        config.synthetic.seed = config.seed;
        if let Some(jobs) = overrides.jobs {
            config.jobs = jobs;
        }
        if let Some(out) = &overrides.output {
            config.output = Some(out.clone());
        }
        if let Some(data) = &overrides.data {
            config.data = Some(data.clone());
        }
        if let Some(model) = overrides.model {
            if config.vit.is_some() {
                return Err(CliError::Usage(
                    "--model conflicts with the explicit vit section of the config".into(),
                ));
            }
            config.model = model;
        }
        if config.jobs == 0 {
            return Err(CliError::Usage("jobs must be at least 1".into()));
        }
        Ok(config)
    }

    /// Checks that do not need the dataset.
    pub fn validate_static(&self) -> Result<(), CliError> {
        let usage = |e: vit_hgr::Error| CliError::Usage(e.to_string());
        self.train.validate().map_err(usage)?;
        self.baseline.validate().map_err(usage)?;
        match &self.vit {
            None if self.segment.patch_side != PRESET_PATCH_SIDE => Err(CliError::Usage(format!(
                "preset {} uses patch_side {PRESET_PATCH_SIDE}, segment.patch_side is {}",
                self.model, self.segment.patch_side
            ))),
            Some(v) if v.patch_side != self.segment.patch_side || v.patch_layout != self.segment.patch_layout => {
                Err(CliError::Usage(
                    "vit.patch_side / vit.patch_layout disagree with the segment section".into(),
                ))
            }
            Some(v) => v.validate().map_err(usage),
            None => Ok(()),
        }
    }

    /// Model configuration for a dataset with `num_classes` gestures and the
    /// given window shape.
    pub fn vit_config(
        &self,
        num_classes: usize,
        window: (usize, usize, usize),
    ) -> Result<VitConfig, CliError> {
        let usage = |e: vit_hgr::Error| CliError::Usage(e.to_string());
        let config = match &self.vit {
            Some(v) => {
                if v.num_classes != num_classes {
                    return Err(CliError::Usage(format!(
                        "vit.num_classes is {}, dataset has {num_classes} gestures",
                        v.num_classes
                    )));
                }
                v.clone()
            }
            None => VitConfig::preset(self.model, num_classes, window, self.segment.patch_layout)
                .map_err(usage)?,
        };
        config.check_window(window).map_err(usage)?;
        Ok(config)
    }

    pub fn model_label(&self) -> String {
        match self.vit {
            Some(_) => "custom".into(),
            None => self.model.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(text: &str, overrides: &Overrides) -> Result<RunConfig, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, text).unwrap();
        RunConfig::load(Some(&path), overrides)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = load_str("{}", &Overrides::default()).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(load_str(r#"{"sed": 1}"#, &Overrides::default()).is_err());
        assert!(load_str(r#"{"train": {"epoch": 1}}"#, &Overrides::default()).is_err());
    }

    #[test]
    fn seeds_follow_the_master_seed() {
        let o = Overrides { seed: Some(9), ..Overrides::default() };
        let c = load_str(r#"{"seed": 2}"#, &o).unwrap();
        assert_eq!((c.seed, c.train.seed, c.synthetic.seed), (9, 9, 9));
        assert!(load_str(r#"{"seed": 2, "train": {"seed": 3}}"#, &Overrides::default()).is_err());
        assert!(load_str(r#"{"seed": 3, "train": {"seed": 3}}"#, &Overrides::default()).is_ok());
    }

    #[test]
    fn resolved_config_round_trips() {
        let o = Overrides { seed: Some(4), jobs: Some(2), model: Some(ModelId::II), ..Overrides::default() };
        let c = load_str("{}", &o).unwrap();
        let again = load_str(&c.to_json(), &Overrides::default()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn preset_conflicts_are_usage_errors() {
        let c = load_str(r#"{"segment": {"patch_side": 2}}"#, &Overrides::default()).unwrap();
        assert!(matches!(c.validate_static(), Err(CliError::Usage(_))));
    }
}
