//! Built-in static detectors for the C subset used by defensive challenges.
//!
//! Every detector is a pure function of one file's text. Token-level
//! detectors (banned functions, format strings) run on any file; the
//! others need matched brackets and are skipped for files that do not
//! parse, which instead get a low-severity `analysis_incomplete` finding.

mod banned;
mod format;
mod off_by_one;
mod size_arith;
mod unchecked_alloc;

use std::collections::BTreeSet;

use csc_core::{DetectorId, Finding, GuidelineRef, PackFile, Severity};

use crate::source::Source;

const C_EXTENSIONS: [&str; 6] = ["c", "h", "cc", "cpp", "cxx", "hpp"];

pub fn is_c_source(path: &str) -> bool {
    path.rsplit_once('.')
        .is_some_and(|(_, ext)| C_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()))
}

pub(crate) struct Sink<'a> {
    file: &'a str,
    out: Vec<Finding>,
}

impl Sink<'_> {
    pub(crate) fn push(
        &mut self,
        detector_id: DetectorId,
        cwe: &str,
        rule: &str,
        line: u32,
        severity: Severity,
        message: String,
    ) {
        self.out.push(Finding {
            detector_id,
            cwe: cwe.to_string(),
            guideline: GuidelineRef::cert_c(rule),
            file: self.file.to_string(),
            line: line.max(1),
            severity,
            message,
        });
    }
}

/// Findings for one file from the enabled detectors.
pub fn analyse_file(path: &str, text: &str, detectors: &BTreeSet<DetectorId>) -> Vec<Finding> {
    let src = Source::parse(text);
    let mut sink = Sink {
        file: path,
        out: Vec::new(),
    };
    let on = |d: DetectorId| detectors.contains(&d);
    if on(DetectorId::BannedFunctions) {
        banned::check(&src, &mut sink);
    }
    if on(DetectorId::FormatString) {
        format::check(&src, &mut sink);
    }
    if src.is_structured() {
        if on(DetectorId::UncheckedAlloc) {
            unchecked_alloc::check(&src, &mut sink);
        }
        if on(DetectorId::OverflowSizeArith) {
            size_arith::check(&src, &mut sink);
        }
        if on(DetectorId::OffByOne) {
            off_by_one::check(&src, &mut sink);
        }
    } else {
        let first = &src.problems[0];
        sink.push(
            DetectorId::AnalysisIncomplete,
            "CWE-710",
            "MSC00-C",
            first.line,
            Severity::Low,
            format!(
                "could not parse the structure of this file ({}); some checks were skipped",
                first.message
            ),
        );
    }
    sink.out
}

/// Runs `detectors` over every C source in `files` and keeps findings at
/// or above `floor`, sorted by (file, line, detector).
pub fn run_static_analysis(
    files: &[PackFile],
    detectors: &BTreeSet<DetectorId>,
    floor: Severity,
) -> Vec<Finding> {
    let mut out: Vec<Finding> = files
        .iter()
        .filter(|f| is_c_source(&f.path))
        .flat_map(|f| analyse_file(&f.path, &f.text(), detectors))
        .filter(|f| f.severity >= floor)
        .collect();
    out.sort_by(|a, b| {
        a.location_key()
            .cmp(&b.location_key())
            .then_with(|| a.message.cmp(&b.message))
    });
    out.dedup();
    out
}
