//! TOML run configuration: one section per settings group, every key
//! optional.
//!
//! ```toml
//! [corpus]
//! n_train = 5000
//! seed = 7
//!
//! [model]
//! d_model = 64
//!
//! [train]
//! epochs = 10
//!
//! [kd]
//! lambda_kd = 0.8
//!
//! [experiment]
//! seeds = [1, 2, 3]
//! lambda_grid = [0.0, 0.4, 0.8, 1.0]
//!
//! [evaluation]
//! warmup = 10
//! timed = 100
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSpec;
use crate::error::{Error, Result};
use crate::evaluation::LatencyOptions;
use crate::losses::KdWeights;
use crate::models::ModelConfig;
use crate::training::TrainConfig;

/// File written next to every command's outputs.
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

/// Repetitions and grid for the ablation and the λ sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub lambda_grid: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { seeds: vec![1, 2, 3], lambda_grid: vec![0.0, 0.4, 0.8, 1.0] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub kd: KdWeights,
    pub experiment: ExperimentConfig,
    pub evaluation: LatencyOptions,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values are all representable in TOML")
    }

    /// Training settings with the `[kd]` section folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { kd: self.kd.clone(), ..self.train.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.train_config().validate()?;
        if self.experiment.seeds.is_empty() {
            return Err(Error::InvalidConfig("experiment.seeds is empty".into()));
        }
        if self.experiment.lambda_grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::InvalidConfig("experiment.lambda_grid values must lie in [0, 1]".into()));
        }
        if self.evaluation.timed == 0 {
            return Err(Error::InvalidConfig("evaluation.timed must be at least 1".into()));
        }
        Ok(())
    }

    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG_FILE);
        fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_override_and_round_trip() {
        let c = RunConfig::from_toml("[train]\nepochs = 3\n[kd]\nlambda_kd = 0.4\nsquared_l2 = true\n").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train_config().kd.lambda_kd, 0.4);
        assert!(c.train_config().kd.squared_l2);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[train]\nepoch = 3\n"), Err(Error::InvalidConfig(_))));
        assert!(matches!(RunConfig::from_toml("[trian]\n"), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn validation_catches_bad_grid() {
        let mut c = RunConfig::default();
        c.experiment.lambda_grid = vec![0.5, 1.5];
        assert!(c.validate().is_err());
        c.experiment.lambda_grid = vec![0.5];
        c.validate().unwrap();
    }
}
