//! Process jail for untrusted compile and run steps.
//!
//! Each [`Sandbox::execute`] call runs one command inside a fresh set of
//! Linux namespaces (mount, network, PID, IPC, UTS), chrooted into a jail
//! directory whose only writable parts are the work directory and a small
//! tmpfs. The command runs under a per-slot unprivileged uid with rlimits for
//! address space, CPU, processes and file size; the supervisor additionally
//! enforces CPU, wall-clock and resident-memory ceilings for the whole
//! process tree. When the namespace init exits the kernel kills everything
//! left in the namespace, so nothing outlives the call.
//!
//! There is no fallback without isolation: on hosts where the jail cannot be
//! built, [`Sandbox::probe`] fails and callers must refuse to run code.

mod exec;
mod jail;
mod limits;
mod proc_scan;

use std::io;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};

use thiserror::Error;

pub use jail::Jail;
pub use limits::{ExecutionRequest, ExecutionResult, Limits, Outcome, Usage};
pub use proc_scan::count_processes;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("invalid execution request: {0}")]
    InvalidRequest(String),
    #[error("host lacks isolation support: {0}")]
    IsolationUnavailable(String),
    #[error("jail {0} no longer exists")]
    JailMissing(PathBuf),
    #[error("sandbox io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct SandboxConfig {
    /// Directory jails are created under.
    pub jail_root: PathBuf,
    /// Maximum number of concurrently running jails.
    pub parallelism: usize,
    /// Slot `i` runs as uid/gid `base_uid + i`.
    pub base_uid: u32,
    pub default_limits: Limits,
    /// Host directories bind-mounted read-only into every jail.
    pub host_dirs: Vec<PathBuf>,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig {
            jail_root: std::env::temp_dir().join("csc-jails"),
            parallelism: 4,
            base_uid: 61000,
            default_limits: Limits::default(),
            host_dirs: ["/usr", "/bin", "/sbin", "/lib", "/lib32", "/lib64", "/libx32"]
                .into_iter()
                .map(PathBuf::from)
                .collect(),
        }
    }
}

pub struct Sandbox {
    config: SandboxConfig,
    slots: Mutex<Vec<bool>>,
    freed: Condvar,
}

pub(crate) struct Slot<'a> {
    sandbox: &'a Sandbox,
    index: usize,
}

impl Slot<'_> {
    pub(crate) fn uid(&self) -> u32 {
        self.sandbox.config.base_uid + self.index as u32
    }
}

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        let mut slots = self.sandbox.slots.lock().unwrap_or_else(|p| p.into_inner());
        slots[self.index] = false;
        self.sandbox.freed.notify_one();
    }
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Result<Self, SandboxError> {
        if config.parallelism == 0 {
            return Err(SandboxError::InvalidRequest("parallelism must be positive".into()));
        }
        config.default_limits.validate()?;
        std::fs::create_dir_all(&config.jail_root)?;
        Ok(Sandbox {
            slots: Mutex::new(vec![false; config.parallelism]),
            freed: Condvar::new(),
            config,
        })
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    pub fn default_limits(&self) -> Limits {
        self.config.default_limits
    }

    /// Uids the jails may run under; used to check nothing is left running.
    pub fn slot_uids(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.config.parallelism).map(|i| self.config.base_uid + i as u32)
    }

    fn acquire(&self) -> Slot<'_> {
        let mut slots = self.slots.lock().unwrap_or_else(|p| p.into_inner());
        loop {
            if let Some(index) = slots.iter().position(|busy| !busy) {
                slots[index] = true;
                return Slot {
                    sandbox: self,
                    index,
                };
            }
            slots = self.freed.wait(slots).unwrap_or_else(|p| p.into_inner());
        }
    }

    /// Creates a jail holding `files` (read-only, under `/src`) and an empty
    /// writable `/work`.
    pub fn prepare_jail<P, B>(
        &self,
        files: impl IntoIterator<Item = (P, B)>,
    ) -> Result<Jail, SandboxError>
    where
        P: AsRef<str>,
        B: AsRef<[u8]>,
    {
        Jail::prepare(&self.config, files)
    }

    /// Runs `request` inside `jail`. Blocks while all slots are busy.
    pub fn execute(
        &self,
        jail: &Jail,
        request: &ExecutionRequest,
    ) -> Result<ExecutionResult, SandboxError> {
        request.validate()?;
        if !jail.root().is_dir() {
            return Err(SandboxError::JailMissing(jail.path().to_path_buf()));
        }
        let slot = self.acquire();
        exec::run(&self.config, jail, request, slot.uid())
    }

    /// Verifies the host can build jails by running `true` in one.
    pub fn probe(&self) -> Result<(), SandboxError> {
        if unsafe { libc::geteuid() } != 0 {
            return Err(SandboxError::IsolationUnavailable(
                "the jail needs root privileges (mount namespaces, chroot, uid switching)".into(),
            ));
        }
        let jail = self.prepare_jail(std::iter::empty::<(&str, &[u8])>())?;
        let request = ExecutionRequest::new(["true"]);
        let result = self.execute(&jail, &request);
        jail.destroy()?;
        match result?.outcome {
            Outcome::Exited(0) => Ok(()),
            other => Err(SandboxError::IsolationUnavailable(format!(
                "probe command ended with {other:?}"
            ))),
        }
    }
}
