//! Run configuration: one TOML document covering scene synthesis, the
//! disparity ladder, the optimizer, and evaluation. Unknown keys are
//! rejected; every run directory gets a verbatim echo of its config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DisparityLadder;
use crate::metrics::EvalConfig;
use crate::optimize::OptimizerConfig;
use crate::synth::SceneSpec;

/// Disparity ladder endpoints and level count, in serialized form.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LadderSpec {
    pub d_min: f64,
    pub d_max: f64,
    pub levels: usize,
}

impl Default for LadderSpec {
    fn default() -> Self {
        Self {
            d_min: 2.0,
            d_max: 32.0,
            levels: 17,
        }
    }
}

impl LadderSpec {
    pub fn build(&self) -> Result<DisparityLadder> {
        DisparityLadder::discretize(self.d_min, self.d_max, self.levels)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Output root; overridable by --out and the output-root env var.
    pub output_dir: Option<PathBuf>,
    pub scene: SceneSpec,
    pub ladder: LadderSpec,
    pub optimizer: OptimizerConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: None,
            scene: SceneSpec::standard_two_layer(7),
            ladder: LadderSpec::default(),
            optimizer: OptimizerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.ladder.build()?;
        self.optimizer.validate()?;
        self.eval.validate(self.scene.width, self.scene.height)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Overwrite the scene seed as well, so one --seed flag controls the
    /// whole run.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.scene.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let config = RunConfig::default();
        let text = config.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, config.seed);
        assert_eq!(back.ladder.levels, config.ladder.levels);
        assert_eq!(back.optimizer.iterations, config.optimizer.iterations);
        back.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("seed = 1\nbogus = true\n");
        assert!(err.is_err());
        let err = toml::from_str::<RunConfig>("[optimizer]\nlearning_rte = 0.1\n");
        assert!(err.is_err());
    }

    #[test]
    fn partial_document_fills_defaults() {
        let config: RunConfig = toml::from_str("seed = 3\n[optimizer]\niterations = 9\n").unwrap();
        assert_eq!(config.seed, 3);
        assert_eq!(config.optimizer.iterations, 9);
        assert_eq!(config.optimizer.beta1, 0.5);
        assert_eq!(config.ladder.d_min, 2.0);
    }
}
