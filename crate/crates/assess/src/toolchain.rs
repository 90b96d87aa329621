//! Compiler adapter: how to build a submission inside the jail and how to
//! read the compiler's diagnostics.

use std::path::{Path, PathBuf};

use csc_sandbox::{ExecutionRequest, Limits};
use serde::{Deserialize, Serialize};

/// Jail path the sources are mounted at.
pub const SOURCE_ROOT: &str = "/src";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticLevel {
    Error,
    Warning,
    Note,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: String,
    pub line: u32,
    pub column: Option<u32>,
    pub level: DiagnosticLevel,
    pub message: String,
}

pub trait Toolchain: Send + Sync {
    /// Command that builds `sources` (jail paths) into [`Toolchain::artifact`].
    fn compile_request(&self, sources: &[String]) -> ExecutionRequest;
    /// Jail path of the built executable.
    fn artifact(&self) -> String;
    /// Jail-relative directory builds and test runs use.
    fn workdir(&self) -> &str;
    fn parse_diagnostics(&self, output: &str) -> Vec<Diagnostic>;
    /// Compiler output with jail paths rewritten to pack-relative ones.
    fn clean_output(&self, output: &str) -> String {
        output.replace(&format!("{SOURCE_ROOT}/"), "")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolchainConfig {
    /// Compiler executable; symlinks are resolved so the real binary is
    /// reachable inside the jail.
    pub compiler: PathBuf,
    /// Argument template. `{output}` becomes the artifact path and
    /// `{sources}` expands to one argument per source file.
    pub args: Vec<String>,
    /// Jail-relative build directory.
    pub workdir: String,
    pub artifact_name: String,
    pub limits: Limits,
}

impl Default for ToolchainConfig {
    fn default() -> Self {
        ToolchainConfig {
            compiler: PathBuf::from("cc"),
            args: [
                "-std=gnu11",
                "-O0",
                "-Wall",
                "-I/src",
                "-o",
                "{output}",
                "{sources}",
                "-lm",
            ]
            .map(String::from)
            .to_vec(),
            workdir: "work".into(),
            artifact_name: "prog".into(),
            limits: Limits {
                cpu_ms: 10_000,
                wall_ms: 30_000,
                mem_bytes: 1 << 30,
                max_processes: 16,
                ..Limits::default()
            },
        }
    }
}

/// Built-in adapter for gcc-compatible C compilers.
#[derive(Debug, Clone)]
pub struct CCompiler {
    config: ToolchainConfig,
    compiler: PathBuf,
}

fn find_on_path(name: &Path) -> Option<PathBuf> {
    if name.components().count() > 1 {
        return Some(name.to_path_buf());
    }
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|d| d.join(name))
        .find(|p| p.is_file())
}

impl CCompiler {
    pub fn new(config: ToolchainConfig) -> std::io::Result<Self> {
        let found = find_on_path(&config.compiler).ok_or_else(|| {
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("compiler {} not found", config.compiler.display()),
            )
        })?;
        let compiler = std::fs::canonicalize(found)?;
        Ok(CCompiler { config, compiler })
    }

    pub fn compiler(&self) -> &Path {
        &self.compiler
    }
}

impl Toolchain for CCompiler {
    fn compile_request(&self, sources: &[String]) -> ExecutionRequest {
        let output = self.artifact();
        let mut argv = vec![self.compiler.display().to_string()];
        for arg in &self.config.args {
            if arg == "{sources}" {
                argv.extend(sources.iter().cloned());
            } else {
                argv.push(arg.replace("{output}", &output));
            }
        }
        let mut request = ExecutionRequest::new(argv).limits(self.config.limits);
        request.workdir = self.config.workdir.clone();
        request
    }

    fn artifact(&self) -> String {
        format!("/{}/{}", self.config.workdir, self.config.artifact_name)
    }

    fn workdir(&self) -> &str {
        &self.config.workdir
    }

    fn parse_diagnostics(&self, output: &str) -> Vec<Diagnostic> {
        parse_gcc_diagnostics(&self.clean_output(output))
    }
}

/// Parses `file:line[:col]: level: message` lines.
pub fn parse_gcc_diagnostics(output: &str) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for line in output.lines() {
        let mut parts = line.splitn(4, ':');
        let (Some(file), Some(line_no), Some(third)) = (parts.next(), parts.next(), parts.next())
        else {
            continue;
        };
        let Ok(line_no) = line_no.trim().parse::<u32>() else {
            continue;
        };
        let (column, rest) = match third.trim().parse::<u32>() {
            Ok(col) => (Some(col), parts.next().unwrap_or("").to_string()),
            Err(_) => {
                let tail = parts.next().map(|t| format!(":{t}")).unwrap_or_default();
                (None, format!("{third}{tail}"))
            }
        };
        let rest = rest.trim_start();
        let (level, message) = if let Some(m) = rest.strip_prefix("fatal error:") {
            (DiagnosticLevel::Error, m)
        } else if let Some(m) = rest.strip_prefix("error:") {
            (DiagnosticLevel::Error, m)
        } else if let Some(m) = rest.strip_prefix("warning:") {
            (DiagnosticLevel::Warning, m)
        } else if let Some(m) = rest.strip_prefix("note:") {
            (DiagnosticLevel::Note, m)
        } else {
            continue;
        };
        out.push(Diagnostic {
            file: file.to_string(),
            line: line_no,
            column,
            level,
            message: message.trim().to_string(),
        });
    }
    out
}
