//! Challenge pack types.
//!
//! A pack is one exercise. Every pack presents exactly three phases
//! (introduction, challenge, conclusion). Question-style packs are graded
//! against an [`AnswerKey`]; `code_entry` packs ship a small project the
//! player fixes and are graded by the assessment pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::verdict::{DetectorId, Severity};

/// Current manifest schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Lowercase slug: `[a-z0-9]` followed by `[a-z0-9-]`, no trailing dash.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ChallengeId(String);

impl ChallengeId {
    pub fn new(slug: impl Into<String>) -> Result<Self, String> {
        let slug = slug.into();
        let valid = !slug.is_empty()
            && slug.len() <= 64
            && slug
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
            && !slug.starts_with('-')
            && !slug.ends_with('-');
        if valid {
            Ok(ChallengeId(slug))
        } else {
            Err(format!("invalid slug {slug:?}"))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ChallengeId {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        ChallengeId::new(value)
    }
}

impl From<ChallengeId> for String {
    fn from(id: ChallengeId) -> String {
        id.0
    }
}

impl fmt::Display for ChallengeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Web,
    CCpp,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Web => "web",
            Category::CCpp => "c_cpp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChallengeType {
    SingleChoice,
    MultipleChoice,
    TextEntry,
    AssociateLeftRight,
    CodeSnippet,
    CodeEntry,
}

impl ChallengeType {
    pub fn is_code_entry(self) -> bool {
        self == ChallengeType::CodeEntry
    }
}

/// Difficulty level on a 1..=5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Difficulty(u8);

impl Difficulty {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;

    pub fn new(level: u8) -> Result<Self, String> {
        if (Self::MIN..=Self::MAX).contains(&level) {
            Ok(Difficulty(level))
        } else {
            Err(format!(
                "difficulty {level} out of range {}..={}",
                Self::MIN,
                Self::MAX
            ))
        }
    }

    pub fn level(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Difficulty {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Difficulty::new(value)
    }
}

impl From<Difficulty> for u8 {
    fn from(d: Difficulty) -> u8 {
        d.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Introduction,
    Challenge,
    Conclusion,
}

impl PhaseKind {
    pub const ORDER: [PhaseKind; 3] = [
        PhaseKind::Introduction,
        PhaseKind::Challenge,
        PhaseKind::Conclusion,
    ];
}

impl fmt::Display for PhaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhaseKind::Introduction => "introduction",
            PhaseKind::Challenge => "challenge",
            PhaseKind::Conclusion => "conclusion",
        })
    }
}

/// What the player is shown for a question. Answer keys live in
/// [`GradingSpec::expected_answers`] so they never travel with the view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub left: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub right: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<QuestionSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidelineStandard {
    SeiCertC,
    SeiCertJava,
    Owasp,
    #[serde(rename = "bsi_5_21")]
    Bsi521,
}

impl fmt::Display for GuidelineStandard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuidelineStandard::SeiCertC => "SEI CERT C",
            GuidelineStandard::SeiCertJava => "SEI CERT Java",
            GuidelineStandard::Owasp => "OWASP",
            GuidelineStandard::Bsi521 => "BSI 5.21",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GuidelineRef {
    pub standard: GuidelineStandard,
    pub rule_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl GuidelineRef {
    pub fn cert_c(rule_id: &str) -> Self {
        GuidelineRef {
            standard: GuidelineStandard::SeiCertC,
            rule_id: rule_id.to_string(),
            url: None,
        }
    }
}

impl fmt::Display for GuidelineRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.standard, self.rule_id)
    }
}

/// Expected answer for a question phase.
///
/// Pair answers are compared as an unordered set of ordered (left, right)
/// index pairs. Text answers match after trimming, ignoring ASCII case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKey {
    Choices(BTreeSet<usize>),
    Text(Vec<String>),
    Pairs(BTreeSet<(usize, usize)>),
}

/// A player's answer to a question phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Choices(Vec<usize>),
    Text(String),
    Pairs(Vec<(usize, usize)>),
}

impl AnswerKey {
    pub fn accepts(&self, answer: &Answer) -> bool {
        match (self, answer) {
            (AnswerKey::Choices(key), Answer::Choices(given)) => {
                let given: BTreeSet<usize> = given.iter().copied().collect();
                &given == key
            }
            (AnswerKey::Text(accepted), Answer::Text(given)) => {
                let given = given.trim();
                accepted.iter().any(|a| a.trim().eq_ignore_ascii_case(given))
            }
            (AnswerKey::Pairs(key), Answer::Pairs(given)) => {
                let given: BTreeSet<(usize, usize)> = given.iter().copied().collect();
                &given == key
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedAnswers {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub challenge: Option<AnswerKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conclusion: Option<AnswerKey>,
}

impl ExpectedAnswers {
    pub fn for_phase(&self, kind: PhaseKind) -> Option<&AnswerKey> {
        match kind {
            PhaseKind::Introduction => None,
            PhaseKind::Challenge => self.challenge.as_ref(),
            PhaseKind::Conclusion => self.conclusion.as_ref(),
        }
    }
}

/// One stdin/stdout functional test. Both sides are compared byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalTest {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub stdin: String,
    pub stdout: String,
    #[serde(default)]
    pub exit_status: i32,
}

/// A hostile input fed to the compiled program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub name: String,
    pub input: String,
}

impl ProbeSpec {
    /// Long single token, format specifier spray, empty input, embedded NUL.
    pub fn default_set() -> Vec<ProbeSpec> {
        vec![
            ProbeSpec {
                name: "long_token".into(),
                input: format!("{}\n", "A".repeat(4096)),
            },
            ProbeSpec {
                name: "format_specifiers".into(),
                input: format!("{}\n", "%x".repeat(64)),
            },
            ProbeSpec {
                name: "empty".into(),
                input: String::new(),
            },
            ProbeSpec {
                name: "embedded_nul".into(),
                input: "abc\0def\n".into(),
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradingSpec {
    #[serde(default)]
    pub expected_answers: ExpectedAnswers,
    #[serde(default)]
    pub functional_tests: Vec<FunctionalTest>,
    #[serde(default = "ProbeSpec::default_set")]
    pub security_probes: Vec<ProbeSpec>,
    #[serde(default)]
    pub detectors: BTreeSet<DetectorId>,
    #[serde(default = "default_threshold")]
    pub severity_threshold: Severity,
}

fn default_threshold() -> Severity {
    Severity::Medium
}

impl Default for GradingSpec {
    fn default() -> Self {
        GradingSpec {
            expected_answers: ExpectedAnswers::default(),
            functional_tests: Vec::new(),
            security_probes: ProbeSpec::default_set(),
            detectors: BTreeSet::new(),
            severity_threshold: default_threshold(),
        }
    }
}

/// A file shipped with a pack, path relative to `files/` (or `solution/`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackFile {
    pub path: String,
    pub contents: Vec<u8>,
}

impl PackFile {
    pub fn new(path: impl Into<String>, contents: impl Into<Vec<u8>>) -> Self {
        PackFile {
            path: path.into(),
            contents: contents.into(),
        }
    }

    pub fn text(&self) -> std::borrow::Cow<'_, str> {
        String::from_utf8_lossy(&self.contents)
    }
}

/// Authoring metadata: where the pack author planted a vulnerability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedVulnerability {
    pub detector: DetectorId,
    pub cwe: String,
    pub file: String,
    pub line: u32,
}

/// Per-pack replacement for a category's hint ladder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LadderOverride {
    pub levels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guideline: Option<GuidelineRef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChallengePack {
    pub id: ChallengeId,
    pub title: String,
    pub category: Category,
    pub ctype: ChallengeType,
    pub difficulty: Difficulty,
    pub phases: [Phase; 3],
    pub grading: GradingSpec,
    pub guideline_refs: Vec<GuidelineRef>,
    pub files: Vec<PackFile>,
    /// Reference fix for `code_entry` packs; never delivered to players.
    pub reference: Vec<PackFile>,
    pub planted: Vec<PlantedVulnerability>,
    pub hint_overrides: BTreeMap<String, LadderOverride>,
}

impl ChallengePack {
    pub fn phase(&self, kind: PhaseKind) -> &Phase {
        match kind {
            PhaseKind::Introduction => &self.phases[0],
            PhaseKind::Challenge => &self.phases[1],
            PhaseKind::Conclusion => &self.phases[2],
        }
    }

    pub fn file(&self, path: &str) -> Option<&PackFile> {
        self.files.iter().find(|f| f.path == path)
    }

    /// The project with the reference files swapped in.
    pub fn reference_project(&self) -> Vec<PackFile> {
        self.files
            .iter()
            .map(|f| {
                self.reference
                    .iter()
                    .find(|r| r.path == f.path)
                    .unwrap_or(f)
                    .clone()
            })
            .collect()
    }

    /// Key used to order a corpus.
    pub fn sort_key(&self) -> (Category, Difficulty, &ChallengeId) {
        (self.category, self.difficulty, &self.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert!(ChallengeId::new("sql-injection-1").is_ok());
        assert!(ChallengeId::new("").is_err());
        assert!(ChallengeId::new("Upper").is_err());
        assert!(ChallengeId::new("-lead").is_err());
        assert!(ChallengeId::new("a/b").is_err());
    }

    #[test]
    fn difficulty_range() {
        assert!(Difficulty::new(0).is_err());
        assert_eq!(Difficulty::new(3).unwrap().level(), 3);
        assert!(Difficulty::new(6).is_err());
    }

    #[test]
    fn pair_answers_are_unordered_sets_of_ordered_pairs() {
        let key = AnswerKey::Pairs([(0, 1), (1, 0)].into_iter().collect());
        assert!(key.accepts(&Answer::Pairs(vec![(1, 0), (0, 1)])));
        assert!(!key.accepts(&Answer::Pairs(vec![(1, 0), (1, 0)])));
        assert!(!key.accepts(&Answer::Pairs(vec![(0, 0), (1, 1)])));
    }

    #[test]
    fn text_answers_trim_and_fold_case() {
        let key = AnswerKey::Text(vec!["Prepared Statement".into()]);
        assert!(key.accepts(&Answer::Text("  prepared statement\n".into())));
        assert!(!key.accepts(&Answer::Text("prepared".into())));
        assert!(!key.accepts(&Answer::Choices(vec![0])));
    }

    #[test]
    fn default_probe_set_shape() {
        let probes = ProbeSpec::default_set();
        assert_eq!(probes.len(), 4);
        assert_eq!(probes[0].input.len(), 4097);
        assert_eq!(probes[1].input.matches("%x").count(), 64);
        assert!(probes[2].input.is_empty());
        assert!(probes[3].input.contains('\0'));
    }
}
