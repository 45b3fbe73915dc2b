use crate::ledger::{BusConfig, LedgerConfig};
use crate::ocr::BackendConfig;
use serde::{Deserialize, Serialize};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Customer,
    Admin,
}

/// A bearer token and the principal it authenticates. Config files name the
/// environment variable holding the token in `token_env`; `token` is filled from it
/// on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEntry {
    #[serde(default, skip_serializing)]
    pub token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
    pub role: Role,
    #[serde(default)]
    pub customer_id: Option<String>,
}

impl TokenEntry {
    pub fn new(token: impl Into<String>, role: Role, customer_id: Option<&str>) -> Self {
        Self { token: token.into(), token_env: None, role, customer_id: customer_id.map(str::to_string) }
    }

    fn resolve_env(&mut self) -> Result<(), ConfigError> {
        let Some(var) = &self.token_env else {
            return Err(ConfigError::Invalid("tokens must be given through token_env, not inline".into()));
        };
        match std::env::var(var) {
            Ok(v) if !v.trim().is_empty() => {
                self.token = v.trim().to_string();
                Ok(())
            }
            _ => Err(ConfigError::Invalid(format!("token variable {var} is not set"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    #[default]
    Memory,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LedgerSection {
    pub batch_size: usize,
    pub flush_timeout_ms: u64,
    /// Flush explicitly on each confirm instead of waiting out the timer.
    pub logical_time: bool,
    pub commit_timeout_ms: u64,
    /// Environment variable holding the node key secret. Without it a key file in
    /// the data directory is generated on first start.
    pub secret_env: Option<String>,
    pub bus: BusConfig,
}

impl Default for LedgerSection {
    fn default() -> Self {
        let d = LedgerConfig::default();
        Self {
            batch_size: d.batch_size,
            flush_timeout_ms: d.flush_timeout_ms,
            logical_time: d.logical_time,
            commit_timeout_ms: 5000,
            secret_env: None,
            bus: BusConfig { min_delay_ms: 0, max_delay_ms: 0, ..BusConfig::default() },
        }
    }
}

impl LedgerSection {
    pub fn network_config(&self) -> LedgerConfig {
        LedgerConfig {
            batch_size: self.batch_size,
            flush_timeout_ms: self.flush_timeout_ms,
            logical_time: self.logical_time,
            bus: self.bus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub store: StoreKind,
    pub backend: BackendConfig,
    pub ledger: LedgerSection,
    pub tokens: Vec<TokenEntry>,
    pub allow_url_ingest: bool,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("meterpipe-data"),
            store: StoreKind::Memory,
            backend: BackendConfig::sevenseg(),
            ledger: LedgerSection::default(),
            tokens: Vec::new(),
            allow_url_ingest: false,
            max_upload_bytes: 16 << 20,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg: Self = toml::from_str(&text)?;
        for t in &mut cfg.tokens {
            if !t.token.is_empty() {
                return Err(ConfigError::Invalid("tokens must be given through token_env, not inline".into()));
            }
            t.resolve_env()?;
        }
        if cfg.data_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data_dir = dir.join(&cfg.data_dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ledger.batch_size == 0 {
            return Err(ConfigError::Invalid("ledger.batch_size must be at least 1".into()));
        }
        for t in &self.tokens {
            if t.token.is_empty() {
                return Err(ConfigError::Invalid("empty token".into()));
            }
            if t.role == Role::Customer && t.customer_id.is_none() {
                return Err(ConfigError::Invalid("customer tokens need customer_id".into()));
            }
        }
        self.backend.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
