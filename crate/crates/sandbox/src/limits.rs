use serde::{Deserialize, Serialize};

use crate::SandboxError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub cpu_ms: u64,
    pub wall_ms: u64,
    pub mem_bytes: u64,
    pub max_processes: u32,
    pub output_cap: usize,
    /// Largest file the command may write (RLIMIT_FSIZE).
    pub max_file_bytes: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            cpu_ms: 2000,
            wall_ms: 5000,
            mem_bytes: 256 << 20,
            max_processes: 8,
            output_cap: 64 << 10,
            max_file_bytes: 16 << 20,
        }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<(), SandboxError> {
        let positive = self.cpu_ms > 0
            && self.wall_ms > 0
            && self.mem_bytes > 0
            && self.max_processes > 0
            && self.output_cap > 0
            && self.max_file_bytes > 0;
        if positive {
            Ok(())
        } else {
            Err(SandboxError::InvalidRequest(format!(
                "all limits must be positive: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionRequest {
    pub argv: Vec<String>,
    pub stdin: Vec<u8>,
    pub limits: Limits,
    /// Jail-relative working directory; the only writable directory.
    pub workdir: String,
    pub env: Vec<(String, String)>,
}

impl ExecutionRequest {
    pub fn new<S: Into<String>>(argv: impl IntoIterator<Item = S>) -> Self {
        ExecutionRequest {
            argv: argv.into_iter().map(Into::into).collect(),
            stdin: Vec::new(),
            limits: Limits::default(),
            workdir: "work".into(),
            env: Vec::new(),
        }
    }

    pub fn stdin(mut self, bytes: impl Into<Vec<u8>>) -> Self {
        self.stdin = bytes.into();
        self
    }

    pub fn limits(mut self, limits: Limits) -> Self {
        self.limits = limits;
        self
    }

    pub fn validate(&self) -> Result<(), SandboxError> {
        self.limits.validate()?;
        if self.argv.is_empty() || self.argv[0].is_empty() {
            return Err(SandboxError::InvalidRequest("argv must not be empty".into()));
        }
        if self.argv.iter().any(|a| a.contains('\0')) {
            return Err(SandboxError::InvalidRequest("NUL byte in argv".into()));
        }
        if self
            .env
            .iter()
            .any(|(k, v)| k.is_empty() || k.contains(['=', '\0']) || v.contains('\0'))
        {
            return Err(SandboxError::InvalidRequest("malformed environment entry".into()));
        }
        let inside = !self.workdir.is_empty()
            && !self.workdir.starts_with('/')
            && self
                .workdir
                .split('/')
                .all(|c| !c.is_empty() && c != "." && c != "..");
        if !inside {
            return Err(SandboxError::InvalidRequest(format!(
                "workdir {:?} is not inside the jail",
                self.workdir
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum Outcome {
    Exited(i32),
    Signaled(i32),
    TimeoutCpu,
    TimeoutWall,
    MemExceeded,
    SpawnFailed(String),
}

impl Outcome {
    /// Anything other than a normal exit.
    pub fn is_abnormal(&self) -> bool {
        !matches!(self, Outcome::Exited(_))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub cpu_ms: u64,
    pub max_rss_bytes: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub outcome: Outcome,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
    pub usage: Usage,
}
