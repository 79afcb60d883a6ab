//! Service settings. They share the `WAGONLINE_CONFIG` file with the
//! pipeline tunables.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use wagonline_core::config::{ConfigError, PipelineConfig, CONFIG_ENV};

use crate::publish::Endpoint;

#[derive(Debug, Error)]
pub enum ServiceConfigError {
    #[error(transparent)]
    Pipeline(#[from] ConfigError),
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("publish_endpoint: {0}")]
    Endpoint(#[from] crate::publish::PublishError),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
struct ServiceKeys {
    store_dir: PathBuf,
    crop_dir: Option<PathBuf>,
    port: u16,
    api_token: Option<String>,
    publish_endpoint: Option<String>,
    retry_interval_s: u64,
}

impl Default for ServiceKeys {
    fn default() -> Self {
        ServiceKeys {
            store_dir: PathBuf::from("wagonline-data"),
            crop_dir: None,
            port: 8080,
            api_token: None,
            publish_endpoint: None,
            retry_interval_s: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub pipeline: PipelineConfig,
    pub store_dir: PathBuf,
    pub crop_dir: Option<PathBuf>,
    pub port: u16,
    pub api_token: Option<String>,
    pub publish_endpoint: Option<Endpoint>,
    pub retry_interval_s: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self::from_parts(PipelineConfig::default(), ServiceKeys::default(), None)
    }
}

impl ServiceConfig {
    fn from_parts(pipeline: PipelineConfig, keys: ServiceKeys, endpoint: Option<Endpoint>) -> Self {
        ServiceConfig {
            pipeline,
            store_dir: keys.store_dir,
            crop_dir: keys.crop_dir,
            port: keys.port,
            api_token: keys.api_token.filter(|t| !t.is_empty()),
            publish_endpoint: endpoint,
            retry_interval_s: keys.retry_interval_s.max(1),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ServiceConfigError> {
        Self::parse(text, Path::new("<inline>"))
    }

    pub fn load(path: &Path) -> Result<Self, ServiceConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text, path)
    }

    pub fn from_env() -> Result<Self, ServiceConfigError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(path) => Self::load(Path::new(&path)),
            None => Ok(Self::default()),
        }
    }

    fn parse(text: &str, path: &Path) -> Result<Self, ServiceConfigError> {
        let pipeline = PipelineConfig::from_toml(text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ServiceConfigError::Parse { path: path.into(), message },
            other => other.into(),
        })?;
        let keys: ServiceKeys = toml::from_str(text)
            .map_err(|e| ServiceConfigError::Parse { path: path.into(), message: e.to_string() })?;
        let endpoint = keys.publish_endpoint.as_deref().map(Endpoint::parse).transpose()?;
        Ok(Self::from_parts(pipeline, keys, endpoint))
    }
}
