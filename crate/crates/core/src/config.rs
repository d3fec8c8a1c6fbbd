//! The resolved pipeline configuration. Every artifact the pipeline writes
//! embeds a copy, so any output can be traced back to the settings that
//! produced it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::model::{ModelConfig, TrainingConfig};
use crate::raster::RasterConfig;
use crate::synth::ScenarioSpec;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub raster: RasterConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub metrics: MetricsConfig,
    pub synth: ScenarioSpec,
}

impl Config {
    /// Reads a JSON file; missing fields keep their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::InvalidConfig(format!("{}: {} at `{}`", path.display(), e.inner(), e.path())))
    }

    /// One seed drives both scene generation and training.
    pub fn set_seed(&mut self, seed: u64) {
        self.training.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.raster.validate()?;
        self.training.validate()?;
        self.synth.validate()?;
        if self.model.k == 0 || self.model.hidden == 0 || self.model.pool == 0 || self.model.horizon == 0 {
            return Err(Error::InvalidConfig(
                "model k, hidden, pool and horizon must be positive".into(),
            ));
        }
        if self.raster.height % self.model.pool != 0 || self.raster.width % self.model.pool != 0 {
            return Err(Error::InvalidConfig(format!(
                "pool {} must divide the raster size {}×{}",
                self.model.pool, self.raster.height, self.raster.width
            )));
        }
        if !(self.metrics.miss_threshold > 0.0 && self.metrics.miss_threshold.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "miss_threshold {} must be positive",
                self.metrics.miss_threshold
            )));
        }
        Ok(())
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"model": {"k": 3}, "metrics": {"miss_threshold": 1.5}}"#).unwrap();
        let c = Config::load(&path).unwrap();
        assert_eq!(c.model.k, 3);
        assert_eq!(c.model.hidden, 256);
        assert_eq!(c.metrics.miss_threshold, 1.5);
        assert_eq!(c.raster, RasterConfig::default());
    }

    #[test]
    fn unknown_field_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"model": {"kk": 3}}"#).unwrap();
        let err = Config::load(&path).unwrap_err().to_string();
        assert!(err.contains("model"), "{err}");
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = Config::default();
        c.validate().unwrap();
        let back: Config = serde_json::from_value(c.to_value()).unwrap();
        assert_eq!(back, c);
    }
}
