//! Daemon configuration, read from TOML. Every key is optional.
//!
//! ```toml
//! [jobd]
//! listen = "127.0.0.1:7070"
//! data_dir = "mrs-data"
//!
//! [cluster]
//! nodes = 4
//! capacity = 2
//! heartbeat_timeout_ms = 5000
//!
//! [dfs]
//! block_size = 1048576
//! replication = 2
//!
//! [engine]
//! max_attempts = 4
//! worker_timeout_ms = 600000
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::dfs::{DfsConfig, DEFAULT_BLOCK_SIZE, DEFAULT_REPLICATION};
use crate::engine::{EngineConfig, DEFAULT_MAX_ATTEMPTS};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7070";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub jobd: JobdSection,
    pub cluster: ClusterSection,
    pub dfs: DfsSection,
    pub engine: EngineSection,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct JobdSection {
    pub listen: String,
    /// Holds block replicas, the namespace image and node scratch space.
    pub data_dir: PathBuf,
}

impl Default for JobdSection {
    fn default() -> Self {
        Self {
            listen: DEFAULT_LISTEN.to_owned(),
            data_dir: PathBuf::from("mrs-data"),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub nodes: usize,
    pub capacity: usize,
    pub heartbeat_timeout_ms: u64,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self {
            nodes: 4,
            capacity: 2,
            heartbeat_timeout_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DfsSection {
    pub block_size: u64,
    pub replication: usize,
    pub placement_seed: Option<u64>,
}

impl Default for DfsSection {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            replication: DEFAULT_REPLICATION,
            placement_seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub max_attempts: u32,
    pub worker_timeout_ms: u64,
    /// Defaults to the block size.
    pub split_size: Option<u64>,
    pub shuffle_seed: Option<u64>,
}

impl Default for EngineSection {
    fn default() -> Self {
        Self {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            worker_timeout_ms: 600_000,
            split_size: None,
            shuffle_seed: None,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let checks = [
            (self.cluster.nodes >= 1, "cluster.nodes must be at least 1"),
            (self.cluster.capacity >= 1, "cluster.capacity must be at least 1"),
            (self.cluster.heartbeat_timeout_ms >= 1, "cluster.heartbeat_timeout_ms must be positive"),
            (self.dfs.block_size >= 1, "dfs.block_size must be positive"),
            (self.dfs.replication >= 1, "dfs.replication must be at least 1"),
            (self.engine.max_attempts >= 1, "engine.max_attempts must be at least 1"),
            (self.engine.split_size != Some(0), "engine.split_size must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(ConfigError::Invalid((*msg).to_owned())),
            None => Ok(()),
        }
    }

    pub fn heartbeat_timeout(&self) -> Duration {
        Duration::from_millis(self.cluster.heartbeat_timeout_ms)
    }

    pub fn dfs_config(&self) -> DfsConfig {
        let mut c = DfsConfig {
            block_size: self.dfs.block_size,
            replication: self.dfs.replication,
            ..DfsConfig::default()
        };
        if let Some(seed) = self.dfs.placement_seed {
            c.placement_seed = seed;
        }
        c
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            split_size: self.engine.split_size,
            max_attempts: self.engine.max_attempts,
            worker_timeout: Duration::from_millis(self.engine.worker_timeout_ms),
            work_root: self.jobd.data_dir.join("work"),
            shuffle_seed: self.engine.shuffle_seed,
        }
    }
}
