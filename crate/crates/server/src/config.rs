//! Server configuration: one TOML file plus environment overrides.
//!
//! ```toml
//! listen = "0.0.0.0:7400"      # device TCP
//! http = "0.0.0.0:7480"        # operator API and stream
//! heartbeat_ms = 1000
//! stale_factor = 3
//! lead_ms = 150
//! grace_ms = 2000
//! tick_ms = 10
//! log = "run.jsonl"
//! ```
//!
//! `SL_LISTEN` overrides `listen` and `SL_LEAD_MS` overrides `lead_ms`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use stagelink_core::engine::{EngineConfig, DEFAULT_GRACE_MS, DEFAULT_LEAD_MS};
use stagelink_core::gateway::GatewayConfig;
use stagelink_core::ids::Millis;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub listen: SocketAddr,
    pub http: SocketAddr,
    pub heartbeat_ms: Millis,
    pub stale_factor: i64,
    pub lead_ms: Millis,
    pub grace_ms: Millis,
    pub tick_ms: u64,
    /// Append the run log here as it is written.
    pub log: Option<PathBuf>,
    /// Lines kept in memory for `GET /log`.
    pub log_capacity: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            listen: ([127, 0, 0, 1], 7400).into(),
            http: ([127, 0, 0, 1], 7480).into(),
            heartbeat_ms: 1000,
            stale_factor: 3,
            lead_ms: DEFAULT_LEAD_MS,
            grace_ms: DEFAULT_GRACE_MS,
            tick_ms: 10,
            log: None,
            log_capacity: 10_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: String, source: toml::de::Error },
    #[error("{var}={value}: {reason}")]
    Env { var: &'static str, value: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

impl Config {
    pub fn from_toml(doc: &str, path: &str) -> Result<Self, ConfigError> {
        toml::from_str(doc).map_err(|source| ConfigError::Toml { path: path.to_owned(), source })
    }

    /// Read the file if given, then apply overrides from the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let doc = std::fs::read_to_string(p)
                    .map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?;
                Self::from_toml(&doc, &p.display().to_string())?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = var("SL_LISTEN") {
            self.listen = v
                .parse()
                .map_err(|e: std::net::AddrParseError| ConfigError::Env { var: "SL_LISTEN", value: v.clone(), reason: e.to_string() })?;
        }
        if let Some(v) = var("SL_LEAD_MS") {
            self.lead_ms = v
                .parse()
                .map_err(|e: std::num::ParseIntError| ConfigError::Env { var: "SL_LEAD_MS", value: v.clone(), reason: e.to_string() })?;
        }
        Ok(())
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.heartbeat_ms <= 0 || self.stale_factor <= 0 {
            return Err(ConfigError::Invalid("heartbeat_ms and stale_factor must be positive".into()));
        }
        if self.lead_ms < 0 || self.grace_ms < 0 {
            return Err(ConfigError::Invalid("lead_ms and grace_ms must not be negative".into()));
        }
        if self.tick_ms == 0 {
            return Err(ConfigError::Invalid("tick_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig { lead_ms: self.lead_ms, grace_ms: self.grace_ms }
    }

    pub fn gateway(&self) -> GatewayConfig {
        GatewayConfig { heartbeat_ms: self.heartbeat_ms, stale_factor: self.stale_factor, ..GatewayConfig::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_environment() {
        let mut cfg = Config::from_toml("listen = \"0.0.0.0:9000\"\nlead_ms = 200\n", "x.toml").unwrap();
        assert_eq!(cfg.lead_ms, 200);
        cfg.apply_env(|k| (k == "SL_LEAD_MS").then(|| "80".to_owned())).unwrap();
        assert_eq!(cfg.lead_ms, 80);
        assert_eq!(cfg.listen.port(), 9000);
        cfg.apply_env(|k| (k == "SL_LISTEN").then(|| "127.0.0.1:1".to_owned())).unwrap();
        assert_eq!(cfg.listen.port(), 1);
    }

    #[test]
    fn bad_values_are_refused() {
        assert!(matches!(Config::from_toml("lead = 3", "x"), Err(ConfigError::Toml { .. })));
        let mut cfg = Config::default();
        assert!(cfg.apply_env(|_| Some("soon".into())).is_err());
        cfg.tick_ms = 0;
        assert!(cfg.check().is_err());
    }
}
