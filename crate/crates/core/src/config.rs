//! Top-level run configuration: JSON file plus dotted `key=value` overrides.

use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::evaluation::{OcclusionBenchmark, SuiteConfig};
use crate::posedata::Skeleton;
use crate::tokenizer::{TokenizerConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

/// Dataset sizes and skeleton.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// `mpii16` or `mpii16-3d`.
    pub skeleton: String,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            skeleton: "mpii16".into(),
            n_train: 20_000,
            n_val: 1000,
            n_test: 1000,
        }
    }
}

/// Scale of the ablation and sweep suites. Architecture and loss settings
/// come from the top-level `tokenizer` and `estimator` sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSection {
    pub n_train: usize,
    pub n_test: usize,
    pub seeds: Vec<u64>,
    pub tokenizer_epochs: usize,
    pub tokenizer_batch_size: usize,
    pub estimator_epochs: usize,
    /// Values swept by `sweep` when none are given on the command line.
    pub token_values: Vec<usize>,
    pub codebook_values: Vec<usize>,
    /// Random swaps per token in `analyze-tokens`.
    pub swaps_per_token: usize,
}

impl Default for SuiteSection {
    fn default() -> Self {
        let s = SuiteConfig::default();
        SuiteSection {
            n_train: s.n_train,
            n_test: s.n_test,
            seeds: s.seeds,
            tokenizer_epochs: s.tokenizer_train.epochs,
            tokenizer_batch_size: s.tokenizer_train.batch_size,
            estimator_epochs: s.estimator_train.epochs,
            token_values: vec![4, 8, 16],
            codebook_values: vec![32, 128, 512],
            swaps_per_token: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of every derived random stream.
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub tokenizer: TokenizerConfig,
    pub tokenizer_train: TrainConfig,
    pub estimator: EstimatorConfig,
    pub estimator_train: TrainConfig,
    pub benchmark: OcclusionBenchmark,
    pub suite: SuiteSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs"),
            data: DataConfig::default(),
            tokenizer: TokenizerConfig::default(),
            tokenizer_train: TrainConfig::default(),
            estimator: EstimatorConfig::default(),
            estimator_train: TrainConfig::stage_two(),
            benchmark: OcclusionBenchmark::default(),
            suite: SuiteSection::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the optional file, then `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        let config = base.with_overrides(overrides)?;
        config.validate()?;
        Ok(config)
    }

    /// Apply `key.path=value` overrides. The key must already exist; the
    /// value is read as JSON, falling back to a plain string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let slot = key
                .split('.')
                .try_fold(&mut v, |node, part| node.as_object_mut().and_then(|m| m.get_mut(part)))
                .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
            if slot.is_object() {
                return Err(Error::Config(format!("{key:?} is a section, not a value")));
            }
            *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        }
        serde_json::from_value(v).map_err(|e| Error::Config(format!("override: {e}")))
    }

    pub fn skeleton(&self) -> Result<Skeleton> {
        Skeleton::by_name(&self.data.skeleton)
            .ok_or_else(|| Error::Config(format!("unknown skeleton {:?}", self.data.skeleton)))
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.skeleton()?;
        let t = &self.tokenizer;
        if s.num_joints() != t.num_joints || s.dim != t.dim {
            return Err(Error::Config(format!(
                "skeleton {} has K={} D={}, tokenizer K={} D={}",
                self.data.skeleton,
                s.num_joints(),
                s.dim,
                t.num_joints,
                t.dim
            )));
        }
        if self.data.n_train == 0 {
            return Err(Error::Config("data.n_train must be positive".into()));
        }
        t.validate()?;
        self.tokenizer_train.validate()?;
        self.estimator.validate()?;
        self.estimator_train.validate()?;
        self.benchmark.validate()?;
        if self.suite.swaps_per_token == 0 {
            return Err(Error::Config("suite.swaps_per_token must be positive".into()));
        }
        self.suite_config()?.validate()
    }

    /// The suite used by `ablate` and `sweep`; its data seed is the run seed.
    pub fn suite_config(&self) -> Result<SuiteConfig> {
        let s = &self.suite;
        Ok(SuiteConfig {
            skeleton: self.data.skeleton.clone(),
            data_seed: self.seed,
            n_train: s.n_train,
            n_test: s.n_test,
            seeds: s.seeds.clone(),
            tokenizer: self.tokenizer.clone(),
            tokenizer_train: TrainConfig {
                epochs: s.tokenizer_epochs,
                batch_size: s.tokenizer_batch_size,
                ..self.tokenizer_train.clone()
            },
            estimator: self.estimator.clone(),
            estimator_train: TrainConfig {
                epochs: s.estimator_epochs,
                ..self.estimator_train.clone()
            },
            benchmark: self.benchmark.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_matches_suite_defaults() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let mut s = c.suite_config().unwrap();
        s.data_seed = 0;
        assert_eq!(s, SuiteConfig::default());
    }

    #[test]
    fn overrides_set_nested_values() {
        let c = RunConfig::default()
            .with_overrides(&[
                "tokenizer.num_tokens=16".into(),
                "data.skeleton=mpii16-3d".into(),
                "tokenizer.dim=3".into(),
                "suite.seeds=[4,5]".into(),
                "tokenizer.mjm=false".into(),
            ])
            .unwrap();
        assert_eq!(c.tokenizer.num_tokens, 16);
        assert_eq!(c.data.skeleton, "mpii16-3d");
        assert_eq!(c.suite.seeds, vec![4, 5]);
        assert!(!c.tokenizer.mjm);
        c.validate().unwrap();
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let c = RunConfig::default();
        for o in ["tokenizer.nope=1", "tokenizer=1", "seed", "tokenizer.num_tokens=abc", "a.b.c=1"] {
            assert!(c.with_overrides(&[o.into()]).is_err(), "{o}");
        }
        let bad = c.with_overrides(&["tokenizer.dim=3".into()]).unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 3, "tokenizer": {"num_tokens": 4}}"#).unwrap();
        let c = RunConfig::load(Some(&p), &[]).unwrap();
        assert_eq!((c.seed, c.tokenizer.num_tokens, c.tokenizer.codebook_size), (3, 4, 128));
        std::fs::write(&p, r#"{"sede": 3}"#).unwrap();
        assert!(RunConfig::load(Some(&p), &[]).is_err());
    }
}
