//! Loading and validating challenge packs from disk.
//!
//! Pack layout:
//!
//! ```text
//! <pack>/challenge.toml   manifest (schema_version = 1)
//! <pack>/files/...        project files listed in `files`
//! <pack>/solution/...     reference fix, listed in `reference`
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::pack::{
    AnswerKey, Category, ChallengeId, ChallengePack, ChallengeType, Difficulty, GradingSpec,
    GuidelineRef, LadderOverride, PackFile, Phase, PhaseKind, PlantedVulnerability,
    SCHEMA_VERSION,
};
use crate::verdict::DetectorId;

pub const MANIFEST_FILE: &str = "challenge.toml";
pub const FILES_DIR: &str = "files";
pub const SOLUTION_DIR: &str = "solution";

/// One violation, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationError {
    pub field: String,
    pub violation: String,
}

impl ValidationError {
    fn new(field: impl Into<String>, violation: impl Into<String>) -> Self {
        ValidationError {
            field: field.into(),
            violation: violation.into(),
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.violation)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    id: String,
    title: String,
    category: Category,
    ctype: ChallengeType,
    difficulty: i64,
    phases: Vec<Phase>,
    #[serde(default)]
    guideline_refs: Vec<GuidelineRef>,
    #[serde(default)]
    grading: GradingSpec,
    #[serde(default)]
    files: Vec<String>,
    #[serde(default)]
    reference: Vec<String>,
    #[serde(default)]
    planted: Vec<PlantedVulnerability>,
    #[serde(default)]
    hints: BTreeMap<String, LadderOverride>,
}

/// Checks that `path` is relative and cannot climb out of its base.
pub fn check_relative_path(path: &str) -> Result<(), &'static str> {
    if path.is_empty() {
        return Err("empty path");
    }
    if path.contains('\0') {
        return Err("NUL in path");
    }
    let mut normal = 0;
    for component in Path::new(path).components() {
        match component {
            Component::ParentDir => return Err("path traversal"),
            Component::RootDir | Component::Prefix(_) => return Err("absolute path"),
            Component::CurDir => {}
            Component::Normal(_) => normal += 1,
        }
    }
    if normal == 0 {
        return Err("empty path");
    }
    Ok(())
}

fn read_listed(
    base: &Path,
    listed: &[String],
    field: &str,
    errors: &mut Vec<ValidationError>,
) -> Vec<PackFile> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, path) in listed.iter().enumerate() {
        let field = format!("{field}[{i}]");
        if let Err(why) = check_relative_path(path) {
            errors.push(ValidationError::new(field, format!("{why}: {path:?}")));
            continue;
        }
        if !seen.insert(path.as_str()) {
            errors.push(ValidationError::new(field, format!("duplicate path {path:?}")));
            continue;
        }
        let full = base.join(path);
        match fs::symlink_metadata(&full) {
            Ok(meta) if meta.file_type().is_symlink() => {
                errors.push(ValidationError::new(field, format!("symlink not allowed: {path:?}")));
            }
            Ok(meta) if meta.is_file() => match fs::read(&full) {
                Ok(contents) => out.push(PackFile::new(path.clone(), contents)),
                Err(e) => errors.push(ValidationError::new(field, format!("unreadable: {e}"))),
            },
            _ => errors.push(ValidationError::new(
                field,
                format!("dangling file reference {path:?}"),
            )),
        }
    }
    out
}

fn check_answer_key(
    key: &AnswerKey,
    phase: &Phase,
    ctype: Option<ChallengeType>,
    field: &str,
    errors: &mut Vec<ValidationError>,
) {
    let Some(question) = &phase.question else {
        errors.push(ValidationError::new(
            field,
            format!("answer key without a question in the {} phase", phase.kind),
        ));
        return;
    };
    match key {
        AnswerKey::Choices(choices) => {
            if choices.is_empty() {
                errors.push(ValidationError::new(field, "no correct option"));
            }
            if let Some(bad) = choices.iter().find(|&&c| c >= question.options.len()) {
                errors.push(ValidationError::new(
                    field,
                    format!("option index {bad} out of range"),
                ));
            }
            let single = matches!(
                ctype,
                Some(ChallengeType::SingleChoice) | Some(ChallengeType::CodeSnippet)
            );
            if single && choices.len() != 1 {
                errors.push(ValidationError::new(
                    field,
                    format!("single choice needs exactly one correct option, found {}", choices.len()),
                ));
            }
        }
        AnswerKey::Text(accepted) => {
            if accepted.iter().all(|a| a.trim().is_empty()) {
                errors.push(ValidationError::new(field, "no accepted text answer"));
            }
        }
        AnswerKey::Pairs(pairs) => {
            let n = question.left.len();
            if n == 0 || question.right.len() != n {
                errors.push(ValidationError::new(
                    field,
                    "left and right columns must be non-empty and of equal length",
                ));
            }
            let lefts: BTreeSet<usize> = pairs.iter().map(|p| p.0).collect();
            let rights: BTreeSet<usize> = pairs.iter().map(|p| p.1).collect();
            let full: BTreeSet<usize> = (0..n).collect();
            if pairs.len() != n || lefts != full || rights != full {
                errors.push(ValidationError::new(
                    field,
                    "pair mapping is not a bijection on the declared columns",
                ));
            }
        }
    }
    let expected_kind = match ctype {
        Some(ChallengeType::SingleChoice) | Some(ChallengeType::MultipleChoice) => {
            Some(matches!(key, AnswerKey::Choices(_)))
        }
        Some(ChallengeType::TextEntry) => Some(matches!(key, AnswerKey::Text(_))),
        Some(ChallengeType::AssociateLeftRight) => Some(matches!(key, AnswerKey::Pairs(_))),
        Some(ChallengeType::CodeSnippet) => {
            Some(matches!(key, AnswerKey::Choices(_) | AnswerKey::Text(_)))
        }
        _ => None,
    };
    if expected_kind == Some(false) {
        errors.push(ValidationError::new(field, "answer key kind does not match ctype"));
    }
}

fn line_count(bytes: &[u8]) -> usize {
    if bytes.is_empty() {
        return 0;
    }
    let newlines = bytes.iter().filter(|&&b| b == b'\n').count();
    if bytes.ends_with(b"\n") {
        newlines
    } else {
        newlines + 1
    }
}

/// Loads the pack in `pack_dir`, returning every violation found.
pub fn validate_pack(pack_dir: &Path) -> Result<ChallengePack, Vec<ValidationError>> {
    let manifest_path = pack_dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&manifest_path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(vec![ValidationError::new(MANIFEST_FILE, "missing manifest")]);
        }
        Err(e) => return Err(vec![ValidationError::new(MANIFEST_FILE, e.to_string())]),
    };
    let manifest: Manifest = toml::from_str(&text).map_err(|e| {
        vec![ValidationError::new(
            MANIFEST_FILE,
            e.message().trim().to_string(),
        )]
    })?;

    let mut errors = Vec::new();
    if manifest.schema_version != SCHEMA_VERSION {
        errors.push(ValidationError::new(
            "schema_version",
            format!("unsupported version {}", manifest.schema_version),
        ));
    }
    let id = ChallengeId::new(manifest.id.clone())
        .map_err(|e| errors.push(ValidationError::new("id", e)))
        .ok();
    if manifest.title.trim().is_empty() {
        errors.push(ValidationError::new("title", "empty"));
    }
    let difficulty = u8::try_from(manifest.difficulty)
        .map_err(|_| format!("difficulty {} out of range 1..=5", manifest.difficulty))
        .and_then(Difficulty::new)
        .map_err(|e| errors.push(ValidationError::new("difficulty", e)))
        .ok();

    let ctype = manifest.ctype;
    let phases: Option<[Phase; 3]> = if manifest.phases.len() != 3 {
        errors.push(ValidationError::new(
            "phases",
            format!("expected 3 phases, found {}", manifest.phases.len()),
        ));
        None
    } else {
        let kinds: Vec<PhaseKind> = manifest.phases.iter().map(|p| p.kind).collect();
        if kinds != PhaseKind::ORDER {
            errors.push(ValidationError::new(
                "phases",
                "phase order must be introduction, challenge, conclusion",
            ));
            None
        } else {
            manifest.phases.clone().try_into().ok()
        }
    };

    let grading = &manifest.grading;
    if let Some(phases) = &phases {
        let [intro, challenge, conclusion] = phases;
        if intro.body.trim().is_empty() {
            errors.push(ValidationError::new("phases[0].body", "empty introduction"));
        }
        if ctype.is_code_entry() {
            if challenge.question.is_some() {
                errors.push(ValidationError::new(
                    "phases[1].question",
                    "code_entry challenge phase carries no question",
                ));
            }
            if grading.expected_answers.challenge.is_some() {
                errors.push(ValidationError::new(
                    "grading.expected_answers.challenge",
                    "code_entry packs are graded by the assessment pipeline",
                ));
            }
        } else {
            match &grading.expected_answers.challenge {
                Some(key) => check_answer_key(
                    key,
                    challenge,
                    Some(ctype),
                    "grading.expected_answers.challenge",
                    &mut errors,
                ),
                None => errors.push(ValidationError::new(
                    "grading.expected_answers.challenge",
                    "question challenge needs an answer key",
                )),
            }
            if conclusion.question.is_none() && conclusion.body.trim().is_empty() {
                errors.push(ValidationError::new(
                    "phases[2]",
                    "conclusion needs a question or static text",
                ));
            }
        }
        if let Some(key) = &grading.expected_answers.conclusion {
            check_answer_key(
                key,
                conclusion,
                None,
                "grading.expected_answers.conclusion",
                &mut errors,
            );
        }
    }

    for (i, g) in manifest.guideline_refs.iter().enumerate() {
        if g.rule_id.trim().is_empty() {
            errors.push(ValidationError::new(
                format!("guideline_refs[{i}].rule_id"),
                "empty rule id",
            ));
        }
    }
    for bad in grading
        .detectors
        .iter()
        .filter(|d| !DetectorId::BUILTIN.contains(d))
    {
        errors.push(ValidationError::new(
            "grading.detectors",
            format!("{bad} cannot be enabled"),
        ));
    }

    let files = read_listed(&pack_dir.join(FILES_DIR), &manifest.files, "files", &mut errors);
    let reference = read_listed(
        &pack_dir.join(SOLUTION_DIR),
        &manifest.reference,
        "reference",
        &mut errors,
    );
    let listed: BTreeSet<&str> = manifest.files.iter().map(String::as_str).collect();
    for (i, path) in manifest.reference.iter().enumerate() {
        if !listed.contains(path.as_str()) {
            errors.push(ValidationError::new(
                format!("reference[{i}]"),
                format!("{path:?} is not one of the pack files"),
            ));
        }
    }

    if ctype.is_code_entry() {
        if manifest.category != Category::CCpp {
            errors.push(ValidationError::new("category", "code_entry packs must be c_cpp"));
        }
        if manifest.files.is_empty() {
            errors.push(ValidationError::new("files", "code_entry needs project files"));
        }
        if grading.functional_tests.is_empty() {
            errors.push(ValidationError::new(
                "grading.functional_tests",
                "code_entry needs at least one functional test",
            ));
        }
        if grading.detectors.is_empty() {
            errors.push(ValidationError::new(
                "grading.detectors",
                "code_entry needs at least one enabled detector",
            ));
        }
    }

    for (i, plant) in manifest.planted.iter().enumerate() {
        let field = format!("planted[{i}]");
        match files.iter().find(|f| f.path == plant.file) {
            None => errors.push(ValidationError::new(
                &field,
                format!("unknown file {:?}", plant.file),
            )),
            Some(f) => {
                if plant.line == 0 || plant.line as usize > line_count(&f.contents) {
                    errors.push(ValidationError::new(
                        &field,
                        format!("line {} outside {}", plant.line, plant.file),
                    ));
                }
            }
        }
        if !grading.detectors.contains(&plant.detector) {
            errors.push(ValidationError::new(
                &field,
                format!("detector {} not enabled", plant.detector),
            ));
        }
    }

    for (category, ladder) in &manifest.hints {
        let field = format!("hints.{category}");
        if ladder.levels.len() != 4 {
            errors.push(ValidationError::new(
                &field,
                format!("expected 4 levels, found {}", ladder.levels.len()),
            ));
        }
        if ladder.levels.iter().any(|l| l.trim().is_empty()) {
            errors.push(ValidationError::new(&field, "empty hint level"));
        }
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    // All Option values are Some once no errors were recorded.
    Ok(ChallengePack {
        id: id.expect("validated id"),
        title: manifest.title,
        category: manifest.category,
        ctype,
        difficulty: difficulty.expect("validated difficulty"),
        phases: phases.expect("validated phases"),
        grading: manifest.grading,
        guideline_refs: manifest.guideline_refs,
        files,
        reference,
        planted: manifest.planted,
        hint_overrides: manifest.hints,
    })
}

/// Writes `pack` in the on-disk layout `validate_pack` reads.
pub fn write_pack(pack: &ChallengePack, dir: &Path) -> io::Result<()> {
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        id: pack.id.to_string(),
        title: pack.title.clone(),
        category: pack.category,
        ctype: pack.ctype,
        difficulty: i64::from(pack.difficulty.level()),
        phases: pack.phases.to_vec(),
        guideline_refs: pack.guideline_refs.clone(),
        grading: pack.grading.clone(),
        files: pack.files.iter().map(|f| f.path.clone()).collect(),
        reference: pack.reference.iter().map(|f| f.path.clone()).collect(),
        planted: pack.planted.clone(),
        hints: pack.hint_overrides.clone(),
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    for (sub, files) in [(FILES_DIR, &pack.files), (SOLUTION_DIR, &pack.reference)] {
        for file in files.iter() {
            let path = dir.join(sub).join(&file.path);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, &file.contents)?;
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct CorpusReport {
    pub packs: Vec<ChallengePack>,
    pub errors: Vec<(PathBuf, Vec<ValidationError>)>,
}

impl CorpusReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Loads every pack directory directly under `root`.
///
/// Broken packs are reported without aborting the rest. Packs sharing an id
/// are all rejected. The result is sorted by (category, difficulty, id).
pub fn load_corpus(root: &Path) -> io::Result<CorpusReport> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_dir()).unwrap_or(false))
        .filter(|e| !e.file_name().to_string_lossy().starts_with('.'))
        .map(|e| e.path())
        .collect();
    dirs.sort();

    let mut report = CorpusReport::default();
    let mut loaded = Vec::new();
    for dir in dirs {
        match validate_pack(&dir) {
            Ok(pack) => loaded.push((dir, pack)),
            Err(errs) => report.errors.push((dir, errs)),
        }
    }

    let mut counts: HashMap<ChallengeId, usize> = HashMap::new();
    for (_, pack) in &loaded {
        *counts.entry(pack.id.clone()).or_default() += 1;
    }
    for (dir, pack) in loaded {
        if counts[&pack.id] > 1 {
            report.errors.push((
                dir,
                vec![ValidationError::new("id", format!("duplicate id {}", pack.id))],
            ));
        } else {
            report.packs.push(pack);
        }
    }
    report.packs.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    report.errors.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(report)
}
