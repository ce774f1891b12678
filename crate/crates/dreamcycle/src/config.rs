//! Runtime configuration: one JSON file carrying every tunable, so a run is
//! reproducible from (config, seed) and the shipped default file doubles as
//! the machine-readable parameter ledger.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::night::NightSpec;
use crate::seed::fnv1a64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    /// host:port the server binds and clients dial.
    pub addr: String,
    /// Spool directory for write-ahead log persistence, relative to the
    /// config file unless absolute. `DREAMCYCLE_SPOOL` overrides it.
    pub spool_dir: String,
    /// Connection attempts before giving up.
    pub retry_attempts: u32,
    /// First retry delay; doubles per attempt.
    pub retry_backoff_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            addr: "127.0.0.1:7474".to_string(),
            spool_dir: "spool".to_string(),
            retry_attempts: 3,
            retry_backoff_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub world_file: String,
    pub rules_file: String,
    /// Directory for logs, patches, metrics, and checkpoints.
    pub out_dir: String,
    pub robot_id: String,
    pub seed: u64,
    /// Day episodes per cycle.
    pub episodes: u32,
    /// Dream cycles (one day block + one night each).
    pub cycles: u32,
    /// Probability per tick of taking a uniformly random action instead of
    /// the matched one.
    pub explore_rate: f64,
    pub night: NightSpec,
    pub server: ServerConfig,
    /// Directory relative paths resolve against; the config file's parent.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            world_file: "worlds/basic.json".to_string(),
            rules_file: "rules/boot.rules".to_string(),
            out_dir: "runs".to_string(),
            robot_id: "robot-1".to_string(),
            seed: 1,
            episodes: 10,
            cycles: 5,
            explore_rate: 0.1,
            night: NightSpec::standard(),
            server: ServerConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("config is invalid: {0}")]
    Invalid(String),
    #[error("configured file does not exist: {0}")]
    MissingFile(PathBuf),
}

impl Config {
    /// Parses and range-checks a config; referenced files are not touched.
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, ConfigError> {
        let cfg: Config =
            serde_json::from_slice(bytes).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file, resolves paths against its directory, and checks
    /// that the world and rules files exist.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_json_bytes(&bytes)?;
        cfg.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        for f in [cfg.world_path(), cfg.rules_path()] {
            if !f.is_file() {
                return Err(ConfigError::MissingFile(f));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.episodes < 1 || self.cycles < 1 {
            return Err(ConfigError::Invalid(
                "episodes and cycles must be at least 1".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.explore_rate) {
            return Err(ConfigError::Invalid(format!(
                "explore_rate must lie in [0, 1], got {}",
                self.explore_rate
            )));
        }
        if self.server.retry_attempts < 1 {
            return Err(ConfigError::Invalid(
                "retry_attempts must be at least 1".to_string(),
            ));
        }
        if self.robot_id.is_empty() {
            return Err(ConfigError::Invalid("robot_id must be nonempty".to_string()));
        }
        // Building the rig exercises channel, translate, and reverse
        // validation in one place.
        crate::night::NightRig::build(&self.night)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn world_path(&self) -> PathBuf {
        self.resolve(&self.world_file)
    }

    pub fn rules_path(&self) -> PathBuf {
        self.resolve(&self.rules_file)
    }

    pub fn out_path(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    /// Spool directory: `DREAMCYCLE_SPOOL` beats the config value.
    pub fn spool_path(&self) -> PathBuf {
        match std::env::var("DREAMCYCLE_SPOOL") {
            Ok(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.resolve(&self.server.spool_dir),
        }
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("config serializes");
        bytes.push(b'\n');
        bytes
    }

    /// Content digest over the serialized form; checkpoints store it so a
    /// resume with a different config is refused instead of half-applied.
    pub fn digest(&self) -> u64 {
        fnv1a64(&serde_json::to_vec(self).expect("config serializes"))
    }
}
