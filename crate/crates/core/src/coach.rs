//! Automatic coach.
//!
//! Each unacceptable verdict produces exactly one hint. The target is the
//! most severe blocking finding (ties broken by file, then line). Without a
//! blocking finding the first failed stage is targeted. The level for the
//! target category climbs 1 → 4 while the category keeps reappearing and
//! saturates at 4. A category that disappears is marked resolved; if it
//! comes back the ladder resumes at the level it had reached rather than at 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pack::{GuidelineRef, LadderOverride};
use crate::time::Timestamp;
use crate::verdict::{Finding, StageResult, Verdict};

pub const MAX_LEVEL: u8 = 4;

pub const COMPILATION: &str = "compilation";
pub const FUNCTIONAL_TESTS: &str = "functional_tests";
pub const SECURITY_PROBES: &str = "security_probes";
pub const DEGRADED: &str = "degraded";

const DEFAULT_LADDERS: &str = include_str!("default_hints.toml");
const DIAGNOSTIC_EXCERPT_LINES: usize = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoachError {
    #[error("the verdict is acceptable; no hint is due")]
    AcceptableVerdict,
    #[error("no hint ladder for category {0:?}")]
    MissingLadder(String),
    #[error("unknown hint {0}")]
    UnknownHint(HintId),
    #[error("invalid hint ladder: {0}")]
    InvalidLadder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HintId(pub u64);

impl fmt::Display for HintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "hint-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryLadder {
    pub levels: [String; 4],
    pub guideline: GuidelineRef,
}

#[derive(Debug, Deserialize)]
struct RawLadder {
    levels: Vec<String>,
    guideline: GuidelineRef,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HintLadder {
    categories: BTreeMap<String, CategoryLadder>,
}

impl HintLadder {
    pub fn parse(text: &str) -> Result<Self, CoachError> {
        let raw: BTreeMap<String, RawLadder> =
            toml::from_str(text).map_err(|e| CoachError::InvalidLadder(e.to_string()))?;
        let mut categories = BTreeMap::new();
        for (name, ladder) in raw {
            let levels = into_levels(&name, ladder.levels)?;
            categories.insert(
                name,
                CategoryLadder {
                    levels,
                    guideline: ladder.guideline,
                },
            );
        }
        Ok(HintLadder { categories })
    }

    /// The ladder shipped with the platform.
    pub fn builtin() -> Self {
        HintLadder::parse(DEFAULT_LADDERS).expect("built-in hint ladder is valid")
    }

    /// Applies per-pack overrides on top of `self`.
    pub fn with_overrides(
        &self,
        overrides: &BTreeMap<String, LadderOverride>,
    ) -> Result<Self, CoachError> {
        let mut out = self.clone();
        for (name, o) in overrides {
            let levels = into_levels(name, o.levels.clone())?;
            let guideline = match (&o.guideline, self.categories.get(name)) {
                (Some(g), _) => g.clone(),
                (None, Some(base)) => base.guideline.clone(),
                (None, None) => {
                    return Err(CoachError::InvalidLadder(format!(
                        "{name}: new category needs a guideline"
                    )))
                }
            };
            out.categories
                .insert(name.clone(), CategoryLadder { levels, guideline });
        }
        Ok(out)
    }

    pub fn category(&self, name: &str) -> Option<&CategoryLadder> {
        self.categories.get(name)
    }

    pub fn categories(&self) -> impl Iterator<Item = (&str, &CategoryLadder)> {
        self.categories.iter().map(|(k, v)| (k.as_str(), v))
    }
}

fn into_levels(name: &str, levels: Vec<String>) -> Result<[String; 4], CoachError> {
    if levels.iter().any(|l| l.trim().is_empty()) {
        return Err(CoachError::InvalidLadder(format!("{name}: empty level text")));
    }
    let count = levels.len();
    levels
        .try_into()
        .map_err(|_| CoachError::InvalidLadder(format!("{name}: expected 4 levels, got {count}")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hint {
    pub id: HintId,
    pub category: String,
    pub level: u8,
    pub text: String,
    pub guideline: Option<GuidelineRef>,
    pub issued_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryProgress {
    pub level: u8,
    pub resolved: bool,
}

/// Coach memory for one (player, challenge).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoachState {
    pub progress: BTreeMap<String, CategoryProgress>,
    pub issued: Vec<Hint>,
}

/// What a hint is about.
#[derive(Debug, Clone, PartialEq)]
pub struct Target<'a> {
    pub category: String,
    pub finding: Option<&'a Finding>,
}

/// Every category the verdict gives evidence for.
pub fn verdict_categories(verdict: &Verdict) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = verdict
        .findings
        .iter()
        .map(|f| f.detector_id.as_str().to_string())
        .collect();
    let s = &verdict.stage_results;
    if s.compile == StageResult::Failed {
        out.insert(COMPILATION.into());
    }
    if s.functional == StageResult::Failed {
        out.insert(FUNCTIONAL_TESTS.into());
    }
    if s.dynamic == StageResult::Failed {
        out.insert(SECURITY_PROBES.into());
    }
    if verdict.degraded {
        out.insert(DEGRADED.into());
    }
    out
}

fn most_severe<'a>(findings: impl Iterator<Item = &'a Finding>) -> Option<&'a Finding> {
    findings.min_by(|a, b| {
        b.severity
            .cmp(&a.severity)
            .then_with(|| a.location_key().cmp(&b.location_key()))
    })
}

/// Picks the single thing the next hint should be about.
pub fn select_target(verdict: &Verdict) -> Option<Target<'_>> {
    if let Some(f) = most_severe(verdict.blocking_findings()) {
        return Some(Target {
            category: f.detector_id.as_str().to_string(),
            finding: Some(f),
        });
    }
    let s = &verdict.stage_results;
    let stage = if s.compile == StageResult::Failed {
        Some(COMPILATION)
    } else if s.functional == StageResult::Failed {
        Some(FUNCTIONAL_TESTS)
    } else if s.dynamic == StageResult::Failed {
        Some(SECURITY_PROBES)
    } else {
        None
    };
    if let Some(category) = stage {
        return Some(Target {
            category: category.into(),
            finding: None,
        });
    }
    if let Some(f) = most_severe(verdict.findings.iter()) {
        return Some(Target {
            category: f.detector_id.as_str().to_string(),
            finding: Some(f),
        });
    }
    verdict.degraded.then(|| Target {
        category: DEGRADED.into(),
        finding: None,
    })
}

fn diagnostics_excerpt(diagnostics: &str) -> String {
    let lines: Vec<&str> = diagnostics
        .lines()
        .filter(|l| !l.trim().is_empty())
        .take(DIAGNOSTIC_EXCERPT_LINES)
        .collect();
    if lines.is_empty() {
        "(no diagnostics)".into()
    } else {
        lines.join("\n")
    }
}

fn stage_detail(verdict: &Verdict, category: &str) -> String {
    use crate::verdict::{ProbeOutcome, TestOutcome};
    match category {
        FUNCTIONAL_TESTS => verdict
            .tests
            .iter()
            .find_map(|t| match &t.outcome {
                TestOutcome::Failed { reason } => Some(format!("{}: {reason}", t.name)),
                TestOutcome::Passed => None,
            })
            .unwrap_or_default(),
        SECURITY_PROBES => verdict
            .probes
            .iter()
            .find_map(|p| match &p.outcome {
                ProbeOutcome::Crashed { reason } => Some(format!("{} ({reason})", p.name)),
                ProbeOutcome::Survived => None,
            })
            .unwrap_or_default(),
        _ => String::new(),
    }
}

fn render(
    template: &str,
    guideline: &GuidelineRef,
    target: &Target<'_>,
    verdict: &Verdict,
) -> String {
    let (cwe, file, line, message) = match target.finding {
        Some(f) => (f.cwe.clone(), f.file.clone(), f.line.to_string(), f.message.clone()),
        None => (String::new(), String::new(), String::new(), String::new()),
    };
    template
        .replace("{guideline}", &guideline.to_string())
        .replace("{cwe}", &cwe)
        .replace("{file}", &file)
        .replace("{line}", &line)
        .replace("{message}", &message)
        .replace(
            "{diagnostics}",
            &diagnostics_excerpt(&verdict.compiler_diagnostics),
        )
        .replace("{detail}", &stage_detail(verdict, &target.category))
}

impl CoachState {
    pub fn level(&self, category: &str) -> Option<u8> {
        self.progress.get(category).map(|p| p.level)
    }

    pub fn is_resolved(&self, category: &str) -> bool {
        self.progress.get(category).is_some_and(|p| p.resolved)
    }

    /// Marks every known category the verdict no longer shows as resolved.
    pub fn resolve_categories(&mut self, verdict: &Verdict) {
        let present = if verdict.acceptable {
            BTreeSet::new()
        } else {
            verdict_categories(verdict)
        };
        for (category, progress) in self.progress.iter_mut() {
            if !present.contains(category) {
                progress.resolved = true;
            }
        }
    }

    /// Issues the single hint for an unacceptable verdict.
    pub fn next_hint(
        &mut self,
        ladder: &HintLadder,
        verdict: &Verdict,
        id: HintId,
        now: Timestamp,
    ) -> Result<Hint, CoachError> {
        if verdict.acceptable {
            return Err(CoachError::AcceptableVerdict);
        }
        let target = select_target(verdict).unwrap_or(Target {
            category: DEGRADED.into(),
            finding: None,
        });
        let rungs = ladder
            .category(&target.category)
            .ok_or_else(|| CoachError::MissingLadder(target.category.clone()))?;
        let level = match self.progress.get(&target.category) {
            None => 1,
            Some(p) if p.resolved => p.level,
            Some(p) => (p.level + 1).min(MAX_LEVEL),
        };
        let guideline = target
            .finding
            .map(|f| f.guideline.clone())
            .unwrap_or_else(|| rungs.guideline.clone());
        let text = render(
            &rungs.levels[usize::from(level - 1)],
            &guideline,
            &target,
            verdict,
        );
        self.progress.insert(
            target.category.clone(),
            CategoryProgress {
                level,
                resolved: false,
            },
        );
        let hint = Hint {
            id,
            category: target.category,
            level,
            text,
            guideline: (level >= 2).then_some(guideline),
            issued_at: now,
        };
        self.issued.push(hint.clone());
        Ok(hint)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub helpful: bool,
    pub comment: Option<String>,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct HintIndex {
    key: (String, String),
    category: String,
    level: u8,
}

/// All coach state for an event: per-(player, challenge) states, the hint
/// index, and hint feedback (one entry per hint and player, last wins).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoachBook {
    states: BTreeMap<(String, String), CoachState>,
    hints: BTreeMap<HintId, HintIndex>,
    feedback: BTreeMap<(HintId, String), Feedback>,
    next_id: u64,
}

impl CoachBook {
    pub fn new() -> Self {
        CoachBook::default()
    }

    pub fn state(&self, player: &str, challenge: &str) -> Option<&CoachState> {
        self.states.get(&(player.to_string(), challenge.to_string()))
    }

    /// Resolves categories and, for an unacceptable verdict, issues a hint.
    pub fn on_verdict(
        &mut self,
        player: &str,
        challenge: &str,
        ladder: &HintLadder,
        verdict: &Verdict,
        now: Timestamp,
    ) -> Result<Option<Hint>, CoachError> {
        let key = (player.to_string(), challenge.to_string());
        let state = self.states.entry(key.clone()).or_default();
        state.resolve_categories(verdict);
        if verdict.acceptable {
            return Ok(None);
        }
        let id = HintId(self.next_id + 1);
        let hint = state.next_hint(ladder, verdict, id, now)?;
        self.next_id += 1;
        self.hints.insert(
            id,
            HintIndex {
                key,
                category: hint.category.clone(),
                level: hint.level,
            },
        );
        Ok(Some(hint))
    }

    pub fn hint(&self, id: HintId) -> Option<&Hint> {
        let index = self.hints.get(&id)?;
        self.states
            .get(&index.key)?
            .issued
            .iter()
            .find(|h| h.id == id)
    }

    /// Owner (player, challenge) of a hint.
    pub fn hint_owner(&self, id: HintId) -> Option<(&str, &str)> {
        self.hints
            .get(&id)
            .map(|i| (i.key.0.as_str(), i.key.1.as_str()))
    }

    pub fn record_feedback(
        &mut self,
        hint: HintId,
        player: &str,
        helpful: bool,
        comment: Option<String>,
        now: Timestamp,
    ) -> Result<(), CoachError> {
        if !self.hints.contains_key(&hint) {
            return Err(CoachError::UnknownHint(hint));
        }
        self.feedback.insert(
            (hint, player.to_string()),
            Feedback {
                helpful,
                comment,
                at: now,
            },
        );
        Ok(())
    }

    pub fn feedback_for(&self, hint: HintId) -> impl Iterator<Item = (&str, &Feedback)> {
        self.feedback
            .range((hint, String::new())..)
            .take_while(move |((h, _), _)| *h == hint)
            .map(|((_, p), f)| (p.as_str(), f))
    }

    /// (helpful, total) feedback counts for hints of `category` at `level`.
    pub fn helpfulness(&self, category: &str, level: u8) -> (usize, usize) {
        self.feedback
            .iter()
            .filter(|((id, _), _)| {
                self.hints
                    .get(id)
                    .is_some_and(|i| i.category == category && i.level == level)
            })
            .fold((0, 0), |(h, t), (_, f)| (h + usize::from(f.helpful), t + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verdict::{DetectorId, Severity, StageResults};
    use std::cmp::Reverse;

    fn finding(detector: DetectorId, severity: Severity, file: &str, line: u32) -> Finding {
        Finding {
            detector_id: detector,
            cwe: "CWE-000".into(),
            guideline: GuidelineRef::cert_c("STR31-C"),
            file: file.into(),
            line,
            severity,
            message: format!("{detector} at {line}"),
        }
    }

    fn verdict(findings: Vec<Finding>) -> Verdict {
        Verdict {
            acceptable: false,
            stage_results: StageResults {
                compile: StageResult::Passed,
                functional: StageResult::Passed,
                static_analysis: StageResult::Failed,
                dynamic: StageResult::Passed,
            },
            findings,
            compiler_diagnostics: String::new(),
            severity_threshold: Severity::Medium,
            tests: vec![],
            probes: vec![],
            degraded: false,
        }
    }

    fn acceptable() -> Verdict {
        Verdict {
            acceptable: true,
            stage_results: StageResults {
                compile: StageResult::Passed,
                functional: StageResult::Passed,
                static_analysis: StageResult::Passed,
                dynamic: StageResult::Passed,
            },
            ..verdict(vec![])
        }
    }

    #[test]
    fn builtin_ladder_is_complete() {
        let ladder = HintLadder::builtin();
        for d in DetectorId::BUILTIN
            .iter()
            .map(|d| d.as_str())
            .chain([COMPILATION, FUNCTIONAL_TESTS, SECURITY_PROBES, DEGRADED, "analysis_incomplete"])
        {
            let l = ladder.category(d).unwrap_or_else(|| panic!("missing {d}"));
            assert!(l.levels[1].contains("{guideline}"), "{d} level 2 must cite a guideline");
        }
    }

    #[test]
    fn first_hint_is_level_one() {
        let ladder = HintLadder::builtin();
        let mut state = CoachState::default();
        let v = verdict(vec![finding(DetectorId::FormatString, Severity::High, "main.c", 3)]);
        let hint = state.next_hint(&ladder, &v, HintId(1), Timestamp(0)).unwrap();
        assert_eq!(hint.category, "format_string");
        assert_eq!(hint.level, 1);
        assert_eq!(hint.guideline, None);
    }

    #[test]
    fn persisting_finding_climbs_and_saturates() {
        let ladder = HintLadder::builtin();
        let mut state = CoachState::default();
        let v = verdict(vec![finding(DetectorId::FormatString, Severity::High, "main.c", 3)]);
        let levels: Vec<u8> = (0..6)
            .map(|i| {
                state.resolve_categories(&v);
                state.next_hint(&ladder, &v, HintId(i), Timestamp(0)).unwrap().level
            })
            .collect();
        assert_eq!(levels, vec![1, 2, 3, 4, 4, 4]);
        let l2 = &state.issued[1];
        assert_eq!(l2.guideline, Some(GuidelineRef::cert_c("STR31-C")));
        assert!(l2.text.contains("STR31-C"));
        assert!(state.issued[2].text.contains("main.c, line 3"));
    }

    #[test]
    fn severity_priority_over_all_pairs() {
        // Oracle: for every ordered pair, the target is whichever finding
        // sorts first by (severity desc, file, line).
        let ladder = HintLadder::builtin();
        let pool = [
            finding(DetectorId::BannedFunctions, Severity::High, "b.c", 9),
            finding(DetectorId::UncheckedAlloc, Severity::Medium, "a.c", 1),
            finding(DetectorId::FormatString, Severity::High, "a.c", 5),
            finding(DetectorId::OffByOne, Severity::Medium, "a.c", 2),
        ];
        for x in &pool {
            for y in &pool {
                if x == y {
                    continue;
                }
                let expected = if (Reverse(x.severity), &x.file, x.line)
                    < (Reverse(y.severity), &y.file, y.line)
                {
                    x
                } else {
                    y
                };
                let v = verdict(vec![x.clone(), y.clone()]);
                let mut state = CoachState::default();
                let hint = state.next_hint(&ladder, &v, HintId(1), Timestamp(0)).unwrap();
                assert_eq!(hint.category, expected.detector_id.as_str());
            }
        }
    }

    #[test]
    fn banned_beats_unchecked_alloc() {
        let ladder = HintLadder::builtin();
        let mut state = CoachState::default();
        let v = verdict(vec![
            finding(DetectorId::UncheckedAlloc, Severity::Medium, "a.c", 1),
            finding(DetectorId::BannedFunctions, Severity::High, "z.c", 40),
        ]);
        let hint = state.next_hint(&ladder, &v, HintId(1), Timestamp(0)).unwrap();
        assert_eq!(hint.category, "banned_functions");
    }

    #[test]
    fn compile_failure_without_findings() {
        let ladder = HintLadder::builtin();
        let mut state = CoachState::default();
        let mut v = verdict(vec![]);
        v.stage_results = StageResults {
            compile: StageResult::Failed,
            functional: StageResult::Skipped,
            static_analysis: StageResult::Passed,
            dynamic: StageResult::Skipped,
        };
        v.compiler_diagnostics = "main.c:4:5: error: expected ';' before 'return'\n".into();
        for i in 1..=3 {
            let hint = state.next_hint(&ladder, &v, HintId(i), Timestamp(0)).unwrap();
            assert_eq!(hint.category, COMPILATION);
            if i == 3 {
                assert!(hint.text.contains("expected ';'"));
            }
        }
    }

    #[test]
    fn acceptable_verdict_is_a_contract_violation() {
        let mut state = CoachState::default();
        assert_eq!(
            state.next_hint(&HintLadder::builtin(), &acceptable(), HintId(1), Timestamp(0)),
            Err(CoachError::AcceptableVerdict)
        );
    }

    #[test]
    fn resolution_and_regression_restart() {
        let ladder = HintLadder::builtin();
        let mut state = CoachState::default();
        let bad = verdict(vec![finding(DetectorId::OffByOne, Severity::Medium, "m.c", 7)]);
        for i in 0..3 {
            state.resolve_categories(&bad);
            state.next_hint(&ladder, &bad, HintId(i), Timestamp(0)).unwrap();
        }
        assert_eq!(state.level("off_by_one"), Some(3));
        let other = verdict(vec![finding(DetectorId::FormatString, Severity::High, "m.c", 2)]);
        state.resolve_categories(&other);
        assert!(state.is_resolved("off_by_one"));
        state.next_hint(&ladder, &other, HintId(9), Timestamp(0)).unwrap();
        state.resolve_categories(&bad);
        assert!(state.is_resolved("format_string"));
        let hint = state.next_hint(&ladder, &bad, HintId(10), Timestamp(0)).unwrap();
        assert_eq!(hint.level, 3);
        state.resolve_categories(&bad);
        assert_eq!(
            state.next_hint(&ladder, &bad, HintId(11), Timestamp(0)).unwrap().level,
            4
        );
    }

    #[test]
    fn empty_findings_resolve_everything() {
        let ladder = HintLadder::builtin();
        let mut state = CoachState::default();
        let v = verdict(vec![
            finding(DetectorId::OffByOne, Severity::Medium, "m.c", 7),
            finding(DetectorId::FormatString, Severity::High, "m.c", 2),
        ]);
        state.next_hint(&ladder, &v, HintId(1), Timestamp(0)).unwrap();
        state.next_hint(&ladder, &v, HintId(2), Timestamp(0)).unwrap();
        state.resolve_categories(&acceptable());
        assert!(state.progress.values().all(|p| p.resolved));
    }

    #[test]
    fn feedback_last_write_wins() {
        let ladder = HintLadder::builtin();
        let mut book = CoachBook::new();
        let v = verdict(vec![finding(DetectorId::FormatString, Severity::High, "m.c", 2)]);
        let h1 = book
            .on_verdict("p1", "c", &ladder, &v, Timestamp(0))
            .unwrap()
            .unwrap();
        book.record_feedback(h1.id, "p1", false, Some("hint too generic".into()), Timestamp(1))
            .unwrap();
        assert_eq!(book.helpfulness("format_string", 1), (0, 1));
        book.record_feedback(h1.id, "p1", true, None, Timestamp(2)).unwrap();
        assert_eq!(book.helpfulness("format_string", 1), (1, 1));
        let stored: Vec<_> = book.feedback_for(h1.id).collect();
        assert_eq!(stored.len(), 1);
        assert!(stored[0].1.helpful);
        book.record_feedback(h1.id, "p2", false, None, Timestamp(3)).unwrap();
        assert_eq!(book.helpfulness("format_string", 1), (1, 2));
        assert_eq!(
            book.record_feedback(HintId(77), "p1", true, None, Timestamp(4)),
            Err(CoachError::UnknownHint(HintId(77)))
        );
    }

    #[test]
    fn pack_overrides_replace_levels() {
        let base = HintLadder::builtin();
        let overrides = [(
            "format_string".to_string(),
            LadderOverride {
                levels: vec!["a".into(), "b {guideline}".into(), "c".into(), "d".into()],
                guideline: None,
            },
        )]
        .into_iter()
        .collect();
        let ladder = base.with_overrides(&overrides).unwrap();
        let l = ladder.category("format_string").unwrap();
        assert_eq!(l.levels[0], "a");
        assert_eq!(l.guideline.rule_id, "FIO30-C");
        let bad = [(
            "format_string".to_string(),
            LadderOverride {
                levels: vec!["a".into()],
                guideline: None,
            },
        )]
        .into_iter()
        .collect();
        assert!(base.with_overrides(&bad).is_err());
    }
}
