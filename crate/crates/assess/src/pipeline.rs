//! The assessment pipeline: static analysis, then the gated chain
//! compile → functional tests → security probes inside the sandbox.

use std::collections::BTreeSet;
use std::sync::Arc;

use csc_core::{
    ChallengeId, ChallengePack, Finding, FunctionalTest, PackFile, ProbeOutcome, ProbeReport,
    ProbeSpec, Severity, StageResult, StageResults, TestOutcome, TestReport, Timestamp, Verdict,
};
use csc_sandbox::{ExecutionRequest, ExecutionResult, Jail, Limits, Outcome, Sandbox, SandboxError};
use thiserror::Error;

use crate::detectors::{is_c_source, run_static_analysis};
use crate::toolchain::{Toolchain, SOURCE_ROOT};

pub const MAX_SUBMISSION_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub player_id: String,
    pub challenge_id: ChallengeId,
    pub files: Vec<PackFile>,
    pub submitted_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubmissionError {
    #[error("challenge {0} does not take code submissions")]
    NotCodeEntry(String),
    #[error("submission is for {submitted}, not {expected}")]
    WrongChallenge { submitted: String, expected: String },
    #[error("file set differs from the challenge project (missing: {missing:?}, unexpected: {unexpected:?})")]
    FileSetMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("file {0} appears more than once")]
    DuplicateFile(String),
    #[error("submission is {bytes} bytes, over the {MAX_SUBMISSION_BYTES} byte limit")]
    TooLarge { bytes: usize },
}

impl Submission {
    /// Players may change the project's files but not add or remove any.
    pub fn check_against(&self, pack: &ChallengePack) -> Result<(), SubmissionError> {
        if !pack.ctype.is_code_entry() {
            return Err(SubmissionError::NotCodeEntry(pack.id.to_string()));
        }
        if self.challenge_id != pack.id {
            return Err(SubmissionError::WrongChallenge {
                submitted: self.challenge_id.to_string(),
                expected: pack.id.to_string(),
            });
        }
        let bytes: usize = self.files.iter().map(|f| f.contents.len()).sum();
        if bytes > MAX_SUBMISSION_BYTES {
            return Err(SubmissionError::TooLarge { bytes });
        }
        let mut submitted = BTreeSet::new();
        for f in &self.files {
            if !submitted.insert(f.path.as_str()) {
                return Err(SubmissionError::DuplicateFile(f.path.clone()));
            }
        }
        let expected: BTreeSet<&str> = pack.files.iter().map(|f| f.path.as_str()).collect();
        if submitted != expected {
            return Err(SubmissionError::FileSetMismatch {
                missing: expected.difference(&submitted).map(|s| s.to_string()).collect(),
                unexpected: submitted.difference(&expected).map(|s| s.to_string()).collect(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AssessError {
    #[error(transparent)]
    Submission(#[from] SubmissionError),
    #[error("sandbox failure: {0}")]
    Sandbox(#[from] SandboxError),
}

fn signal_name(sig: i32) -> &'static str {
    match sig {
        4 => "SIGILL",
        6 => "SIGABRT",
        7 => "SIGBUS",
        8 => "SIGFPE",
        9 => "SIGKILL",
        11 => "SIGSEGV",
        13 => "SIGPIPE",
        24 => "SIGXCPU",
        25 => "SIGXFSZ",
        _ => "signal",
    }
}

/// Reason text for an abnormal termination, `None` for a normal exit.
pub fn abnormal_reason(outcome: &Outcome) -> Option<String> {
    match outcome {
        Outcome::Exited(_) => None,
        Outcome::Signaled(sig) => Some(format!("terminated by {} ({sig})", signal_name(*sig))),
        Outcome::TimeoutCpu => Some("timeout: CPU time limit exceeded".into()),
        Outcome::TimeoutWall => Some("timeout: wall-clock limit exceeded".into()),
        Outcome::MemExceeded => Some("memory limit exceeded".into()),
        Outcome::SpawnFailed(why) => Some(format!("could not start: {why}")),
    }
}

fn show_byte(b: Option<&u8>) -> String {
    match b {
        None => "end of output".into(),
        Some(b) => format!("'{}'", std::ascii::escape_default(*b)),
    }
}

/// Describes the first difference between two outputs.
pub fn byte_diff(expected: &[u8], actual: &[u8]) -> Option<String> {
    if expected == actual {
        return None;
    }
    let at = expected
        .iter()
        .zip(actual)
        .position(|(e, a)| e != a)
        .unwrap_or(expected.len().min(actual.len()));
    Some(format!(
        "stdout differs at byte {at}: expected {}, got {} ({} bytes expected, {} received)",
        show_byte(expected.get(at)),
        show_byte(actual.get(at)),
        expected.len(),
        actual.len()
    ))
}

fn judge_test(test: &FunctionalTest, result: &ExecutionResult) -> TestOutcome {
    if let Some(reason) = abnormal_reason(&result.outcome) {
        return TestOutcome::Failed { reason };
    }
    let Outcome::Exited(status) = result.outcome else {
        unreachable!("abnormal outcomes handled above")
    };
    if let Some(diff) = byte_diff(test.stdout.as_bytes(), &result.stdout) {
        return TestOutcome::Failed { reason: diff };
    }
    if status != test.exit_status {
        return TestOutcome::Failed {
            reason: format!("exit status {status}, expected {}", test.exit_status),
        };
    }
    TestOutcome::Passed
}

fn run_in(
    sandbox: &Sandbox,
    jail: &Jail,
    toolchain: &dyn Toolchain,
    limits: Limits,
    stdin: &[u8],
) -> Result<ExecutionResult, SandboxError> {
    let mut request = ExecutionRequest::new([toolchain.artifact()])
        .stdin(stdin.to_vec())
        .limits(limits);
    request.workdir = toolchain.workdir().to_string();
    sandbox.execute(jail, &request)
}

/// Runs every test against the built artifact in `jail`.
pub fn run_functional_tests(
    sandbox: &Sandbox,
    jail: &Jail,
    toolchain: &dyn Toolchain,
    limits: Limits,
    tests: &[FunctionalTest],
) -> Result<Vec<TestReport>, SandboxError> {
    tests
        .iter()
        .map(|t| {
            let result = run_in(sandbox, jail, toolchain, limits, t.stdin.as_bytes())?;
            Ok(TestReport {
                name: t.name.clone(),
                outcome: judge_test(t, &result),
            })
        })
        .collect()
}

/// Feeds each hostile input to the artifact; any abnormal end is a crash.
pub fn run_security_probes(
    sandbox: &Sandbox,
    jail: &Jail,
    toolchain: &dyn Toolchain,
    limits: Limits,
    probes: &[ProbeSpec],
) -> Result<Vec<ProbeReport>, SandboxError> {
    probes
        .iter()
        .map(|p| {
            let result = run_in(sandbox, jail, toolchain, limits, p.input.as_bytes())?;
            Ok(ProbeReport {
                name: p.name.clone(),
                outcome: match abnormal_reason(&result.outcome) {
                    None => ProbeOutcome::Survived,
                    Some(reason) => ProbeOutcome::Crashed { reason },
                },
            })
        })
        .collect()
}

struct JailGuard(Jail);

impl Drop for JailGuard {
    fn drop(&mut self) {
        if let Err(e) = self.0.destroy() {
            tracing::warn!(jail = %self.0.path().display(), error = %e, "failed to remove jail");
        }
    }
}

pub struct Assessor {
    sandbox: Option<Arc<Sandbox>>,
    toolchain: Arc<dyn Toolchain>,
    run_limits: Limits,
}

enum Dynamic {
    Ran {
        compile: StageResult,
        functional: StageResult,
        dynamic: StageResult,
        diagnostics: String,
        tests: Vec<TestReport>,
        probes: Vec<ProbeReport>,
    },
    Unavailable,
}

impl Assessor {
    /// `sandbox = None` runs every assessment in degraded mode.
    pub fn new(sandbox: Option<Arc<Sandbox>>, toolchain: Arc<dyn Toolchain>, run_limits: Limits) -> Self {
        Assessor {
            sandbox,
            toolchain,
            run_limits,
        }
    }

    pub fn is_degraded(&self) -> bool {
        self.sandbox.is_none()
    }

    pub fn assess(&self, submission: &Submission, pack: &ChallengePack) -> Result<Verdict, AssessError> {
        submission.check_against(pack)?;
        Ok(self.assess_files(&submission.files, pack)?)
    }

    /// Grades `files` against `pack` without the submission checks; used
    /// for the pack's own planted and reference sources.
    pub fn assess_files(&self, files: &[PackFile], pack: &ChallengePack) -> Result<Verdict, SandboxError> {
        let grading = &pack.grading;
        let threshold = grading.severity_threshold;
        let findings = run_static_analysis(files, &grading.detectors, Severity::Low);
        let static_result = if findings.iter().any(|f| f.severity >= threshold) {
            StageResult::Failed
        } else {
            StageResult::Passed
        };
        let dynamic = match &self.sandbox {
            Some(sandbox) => self.run_dynamic(sandbox, files, pack)?,
            None => Dynamic::Unavailable,
        };
        Ok(build_verdict(findings, static_result, threshold, dynamic))
    }

    fn run_dynamic(
        &self,
        sandbox: &Sandbox,
        files: &[PackFile],
        pack: &ChallengePack,
    ) -> Result<Dynamic, SandboxError> {
        match self.run_chain(sandbox, files, pack) {
            Err(SandboxError::IsolationUnavailable(why)) => {
                tracing::error!(%why, "sandbox unavailable; grading in degraded mode");
                Ok(Dynamic::Unavailable)
            }
            other => other,
        }
    }

    fn run_chain(
        &self,
        sandbox: &Sandbox,
        files: &[PackFile],
        pack: &ChallengePack,
    ) -> Result<Dynamic, SandboxError> {
        let jail = JailGuard(sandbox.prepare_jail(files.iter().map(|f| (f.path.as_str(), f.contents.as_slice())))?);
        let sources: Vec<String> = files
            .iter()
            .filter(|f| is_c_source(&f.path) && !f.path.ends_with(".h") && !f.path.ends_with(".hpp"))
            .map(|f| format!("{SOURCE_ROOT}/{}", f.path))
            .collect();
        let build = sandbox.execute(&jail.0, &self.toolchain.compile_request(&sources))?;
        let mut diagnostics = self
            .toolchain
            .clean_output(&String::from_utf8_lossy(&build.stderr));
        let compiled = build.outcome == Outcome::Exited(0);
        if let Some(reason) = abnormal_reason(&build.outcome) {
            diagnostics.push_str(&format!("compiler {reason}\n"));
        }
        if !compiled {
            return Ok(Dynamic::Ran {
                compile: StageResult::Failed,
                functional: StageResult::Skipped,
                dynamic: StageResult::Skipped,
                diagnostics,
                tests: Vec::new(),
                probes: Vec::new(),
            });
        }
        let grading = &pack.grading;
        let tests = run_functional_tests(
            sandbox,
            &jail.0,
            self.toolchain.as_ref(),
            self.run_limits,
            &grading.functional_tests,
        )?;
        let functional_ok = tests.iter().all(|t| t.outcome == TestOutcome::Passed);
        if !functional_ok {
            return Ok(Dynamic::Ran {
                compile: StageResult::Passed,
                functional: StageResult::Failed,
                dynamic: StageResult::Skipped,
                diagnostics,
                tests,
                probes: Vec::new(),
            });
        }
        let probes = run_security_probes(
            sandbox,
            &jail.0,
            self.toolchain.as_ref(),
            self.run_limits,
            &grading.security_probes,
        )?;
        let dynamic = if probes.iter().all(|p| p.outcome == ProbeOutcome::Survived) {
            StageResult::Passed
        } else {
            StageResult::Failed
        };
        Ok(Dynamic::Ran {
            compile: StageResult::Passed,
            functional: StageResult::Passed,
            dynamic,
            diagnostics,
            tests,
            probes,
        })
    }
}

fn build_verdict(
    findings: Vec<Finding>,
    static_result: StageResult,
    threshold: Severity,
    dynamic: Dynamic,
) -> Verdict {
    let mut stage_results = StageResults::all_skipped();
    stage_results.static_analysis = static_result;
    let (degraded, diagnostics, tests, probes) = match dynamic {
        Dynamic::Unavailable => (true, String::new(), Vec::new(), Vec::new()),
        Dynamic::Ran {
            compile,
            functional,
            dynamic,
            diagnostics,
            tests,
            probes,
        } => {
            stage_results.compile = compile;
            stage_results.functional = functional;
            stage_results.dynamic = dynamic;
            (false, diagnostics, tests, probes)
        }
    };
    let acceptable = !degraded && stage_results.iter().all(|s| s == StageResult::Passed);
    Verdict {
        acceptable,
        stage_results,
        findings,
        compiler_diagnostics: diagnostics,
        severity_threshold: threshold,
        tests,
        probes,
        degraded,
    }
}
