//! Findings and verdicts produced by the grading pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::pack::GuidelineRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Medium,
    High,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
        })
    }
}

/// Registered static detectors. `AnalysisIncomplete` is emitted by the
/// analyzer itself when a file cannot be structurally parsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorId {
    BannedFunctions,
    FormatString,
    UncheckedAlloc,
    OverflowSizeArith,
    OffByOne,
    AnalysisIncomplete,
}

impl DetectorId {
    /// Detectors a pack may enable.
    pub const BUILTIN: [DetectorId; 5] = [
        DetectorId::BannedFunctions,
        DetectorId::FormatString,
        DetectorId::UncheckedAlloc,
        DetectorId::OverflowSizeArith,
        DetectorId::OffByOne,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorId::BannedFunctions => "banned_functions",
            DetectorId::FormatString => "format_string",
            DetectorId::UncheckedAlloc => "unchecked_alloc",
            DetectorId::OverflowSizeArith => "overflow_size_arith",
            DetectorId::OffByOne => "off_by_one",
            DetectorId::AnalysisIncomplete => "analysis_incomplete",
        }
    }

    pub fn parse(s: &str) -> Option<DetectorId> {
        DetectorId::BUILTIN
            .into_iter()
            .chain([DetectorId::AnalysisIncomplete])
            .find(|d| d.as_str() == s)
    }
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub detector_id: DetectorId,
    pub cwe: String,
    pub guideline: GuidelineRef,
    pub file: String,
    pub line: u32,
    pub severity: Severity,
    pub message: String,
}

impl Finding {
    pub fn location_key(&self) -> (&str, u32, DetectorId) {
        (&self.file, self.line, self.detector_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageResult {
    Passed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResults {
    pub compile: StageResult,
    pub functional: StageResult,
    #[serde(rename = "static")]
    pub static_analysis: StageResult,
    pub dynamic: StageResult,
}

impl StageResults {
    pub fn all_skipped() -> Self {
        StageResults {
            compile: StageResult::Skipped,
            functional: StageResult::Skipped,
            static_analysis: StageResult::Skipped,
            dynamic: StageResult::Skipped,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = StageResult> {
        [
            self.compile,
            self.functional,
            self.static_analysis,
            self.dynamic,
        ]
        .into_iter()
    }
}

/// Per-test outcome of the functional stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum TestOutcome {
    Passed,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    #[serde(flatten)]
    pub outcome: TestOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ProbeOutcome {
    Survived,
    Crashed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub name: String,
    #[serde(flatten)]
    pub outcome: ProbeOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub acceptable: bool,
    pub stage_results: StageResults,
    pub findings: Vec<Finding>,
    #[serde(default)]
    pub compiler_diagnostics: String,
    pub severity_threshold: Severity,
    #[serde(default)]
    pub tests: Vec<TestReport>,
    #[serde(default)]
    pub probes: Vec<ProbeReport>,
    /// Set when the sandbox was unavailable and only static analysis ran.
    #[serde(default)]
    pub degraded: bool,
}

impl Verdict {
    /// Findings at or above the pack's threshold.
    pub fn blocking_findings(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(move |f| f.severity >= self.severity_threshold)
    }

    /// Structural consistency check used by tests and before persistence.
    pub fn is_consistent(&self) -> bool {
        let s = &self.stage_results;
        if self.acceptable
            && (self.blocking_findings().next().is_some()
                || self.degraded
                || s.iter().any(|r| r != StageResult::Passed))
        {
            return false;
        }
        if s.compile != StageResult::Passed
            && (s.functional != StageResult::Skipped || s.dynamic != StageResult::Skipped)
        {
            return false;
        }
        if s.functional == StageResult::Failed && s.dynamic != StageResult::Skipped {
            return false;
        }
        true
    }
}
