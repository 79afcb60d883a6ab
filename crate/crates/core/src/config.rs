//! Pipeline tunables, read from a flat key-value TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recognize::RecognizeConfig;
use crate::track::TrackerConfig;

/// Environment variable naming the config file.
pub const CONFIG_ENV: &str = "WAGONLINE_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub tracker: TrackerConfig,
    #[serde(flatten)]
    pub recognize: RecognizeConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::parse(text, Path::new("<inline>"))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text, path)
    }

    /// Loads the file named by `WAGONLINE_CONFIG`, or the defaults when unset.
    pub fn from_env() -> Result<Self, ConfigError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(path) => Self::load(Path::new(&path)),
            None => Ok(Self::default()),
        }
    }

    fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let config: Self =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.tracker;
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if !(t.iou_threshold > 0.0 && t.iou_threshold <= 1.0) {
            return bad("iou_threshold must be in (0, 1]");
        }
        if t.confirm_frames == 0 || t.close_after == 0 {
            return bad("confirm_frames and close_after must be positive");
        }
        if t.gap_factor <= 1.0 {
            return bad("gap_factor must exceed 1");
        }
        if !(0.0..=1.0).contains(&t.min_region_conf) || !(0.0..=1.0).contains(&self.recognize.tau_conf) {
            return bad("confidence thresholds must be in [0, 1]");
        }
        if t.count_line_x.is_some_and(|x| !x.is_finite() || x < 0.0) {
            return bad("count_line must be a non-negative pixel column");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_keys() {
        let c = PipelineConfig::from_toml(
            "iou_threshold = 0.4\nclose_after = 12\ncount_line = 800.0\ntau_conf = 0.6\nmax_low = 2\n",
        )
        .unwrap();
        assert_eq!(c.tracker.iou_threshold, 0.4);
        assert_eq!(c.tracker.close_after, 12);
        assert_eq!(c.tracker.count_line_x, Some(800.0));
        assert_eq!(c.tracker.confirm_frames, 3);
        assert_eq!(c.recognize, RecognizeConfig { tau_conf: 0.6, max_low: 2 });
    }

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(PipelineConfig::from_toml("gap_factor = 0.5"), Err(ConfigError::Invalid(_))));
        assert!(matches!(PipelineConfig::from_toml("iou_threshold = \"high\""), Err(ConfigError::Parse { .. })));
    }
}
