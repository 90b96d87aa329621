//! Event configuration file (TOML) and startup checks.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use csc_assess::ToolchainConfig;
use csc_core::{load_corpus, ChallengePack, CorpusReport, EventSecret, GameClock, Timestamp};
use csc_sandbox::{Limits, SandboxConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockConfig {
    /// Unix seconds.
    pub start: i64,
    pub duration_s: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxSettings {
    /// Refuse to start when the host cannot isolate submissions. When
    /// false, only static analysis runs and every verdict is flagged
    /// degraded (and never acceptable).
    pub require_isolation: bool,
    pub jail_root: Option<PathBuf>,
    pub parallelism: usize,
    pub base_uid: u32,
    pub host_dirs: Option<Vec<PathBuf>>,
    /// Limits for test and probe runs of the built program.
    pub run_limits: Limits,
}

impl Default for SandboxSettings {
    fn default() -> Self {
        let base = SandboxConfig::default();
        SandboxSettings {
            require_isolation: true,
            jail_root: None,
            parallelism: base.parallelism,
            base_uid: base.base_uid,
            host_dirs: None,
            run_limits: Limits::default(),
        }
    }
}

impl SandboxSettings {
    pub fn sandbox_config(&self) -> SandboxConfig {
        let mut config = SandboxConfig {
            parallelism: self.parallelism,
            base_uid: self.base_uid,
            default_limits: self.run_limits,
            ..SandboxConfig::default()
        };
        if let Some(root) = &self.jail_root {
            config.jail_root = root.clone();
        }
        if let Some(dirs) = &self.host_dirs {
            config.host_dirs = dirs.clone();
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueSettings {
    pub workers: usize,
    pub capacity: usize,
}

impl Default for QueueSettings {
    fn default() -> Self {
        QueueSettings {
            workers: 4,
            capacity: 256,
        }
    }
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub name: String,
    pub secret_file: PathBuf,
    pub corpus_root: PathBuf,
    /// Event log file; created on first start and replayed afterwards.
    pub log_file: PathBuf,
    /// Bearer token that authorizes team registration.
    pub registration_token: String,
    pub clock: ClockConfig,
    #[serde(default)]
    pub conclusion_bonus: u32,
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    #[serde(default)]
    pub sandbox: SandboxSettings,
    #[serde(default)]
    pub toolchain: ToolchainConfig,
    #[serde(default)]
    pub queue: QueueSettings,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path} is invalid: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("event secret {path} is unusable: {reason}")]
    Secret { path: PathBuf, reason: String },
    #[error("corpus {root} failed validation:\n{report}")]
    Corpus { root: PathBuf, report: String },
    #[error("{0}")]
    Invalid(String),
}

/// Everything startup needs, read and checked.
#[derive(Debug, Clone)]
pub struct EventSetup {
    pub config: EventConfig,
    pub secret: EventSecret,
    pub clock: GameClock,
    pub packs: Vec<Arc<ChallengePack>>,
}

/// One indented line per problem, prefixed with the pack directory.
pub fn render_corpus_errors(report: &CorpusReport) -> String {
    let mut lines = Vec::new();
    for (dir, errors) in &report.errors {
        for e in errors {
            lines.push(format!("  {}: {e}", dir.display()));
        }
    }
    lines.join("\n")
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl EventConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Reads a config file; relative paths in it are relative to its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = EventConfig::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut config.secret_file);
        resolve(base, &mut config.corpus_root);
        resolve(base, &mut config.log_file);
        if let Some(root) = config.sandbox.jail_root.as_mut() {
            resolve(base, root);
        }
        Ok(config)
    }

    /// Reads the secret and the corpus. Any problem refuses startup.
    pub fn prepare(self) -> Result<EventSetup, ConfigError> {
        if self.name.trim().is_empty() {
            return Err(ConfigError::Invalid("event name must not be empty".into()));
        }
        if self.registration_token.len() < 8 {
            return Err(ConfigError::Invalid(
                "registration_token must be at least 8 characters".into(),
            ));
        }
        let clock = GameClock::new(Timestamp(self.clock.start), self.clock.duration_s)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let bytes = std::fs::read(&self.secret_file).map_err(|e| ConfigError::Secret {
            path: self.secret_file.clone(),
            reason: e.to_string(),
        })?;
        let secret = EventSecret::from_file_contents(&bytes).map_err(|e| ConfigError::Secret {
            path: self.secret_file.clone(),
            reason: e.to_string(),
        })?;
        let report = load_corpus(&self.corpus_root).map_err(|source| ConfigError::Read {
            path: self.corpus_root.clone(),
            source,
        })?;
        if !report.is_clean() {
            return Err(ConfigError::Corpus {
                root: self.corpus_root.clone(),
                report: render_corpus_errors(&report),
            });
        }
        if report.packs.is_empty() {
            return Err(ConfigError::Corpus {
                root: self.corpus_root.clone(),
                report: "  no challenge packs found".into(),
            });
        }
        let packs = report.packs.into_iter().map(Arc::new).collect();
        Ok(EventSetup {
            config: self,
            secret,
            clock,
            packs,
        })
    }
}
