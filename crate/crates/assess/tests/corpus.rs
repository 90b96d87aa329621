//! Every corpus pack anchors both ends: its planted source must be rejected
//! with the planted weakness reported and its reference fix accepted.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use csc_core::{
    derive_flag, ChallengePack, CoachState, DetectorId, EventSecret, HintId, HintLadder, Timestamp,
    Verdict,
};

fn code_packs() -> Vec<ChallengePack> {
    common::corpus()
        .into_iter()
        .filter(|p| p.ctype.is_code_entry())
        .collect()
}

#[test]
fn corpus_covers_every_detector() {
    let packs = code_packs();
    assert!(packs.len() >= 8, "only {} code_entry packs", packs.len());
    let planted: BTreeSet<DetectorId> = packs
        .iter()
        .flat_map(|p| p.planted.iter().map(|v| v.detector))
        .collect();
    assert_eq!(planted, DetectorId::BUILTIN.into_iter().collect());
    for p in &packs {
        assert!(!p.planted.is_empty(), "{} has no planted weakness", p.id);
        assert!(!p.reference.is_empty(), "{} has no reference fix", p.id);
    }
}

fn describe(v: &Verdict) -> String {
    format!(
        "stages {:?}\nfindings {:#?}\ntests {:?}\nprobes {:?}\n{}",
        v.stage_results, v.findings, v.tests, v.probes, v.compiler_diagnostics
    )
}

#[test]
fn planted_and_reference_sources_anchor_every_pack() {
    let h = common::harness();
    let started = Instant::now();
    for pack in code_packs() {
        let planted = h.assessor.assess_files(&pack.files, &pack).unwrap();
        assert!(planted.is_consistent(), "{}: {}", pack.id, describe(&planted));
        assert!(!planted.acceptable, "{} planted source accepted", pack.id);
        for plant in &pack.planted {
            assert!(
                planted.findings.iter().any(|f| f.detector_id == plant.detector
                    && f.cwe == plant.cwe
                    && f.file == plant.file
                    && f.line == plant.line),
                "{}: planted {:?} not reported\n{}",
                pack.id,
                plant,
                describe(&planted)
            );
        }

        let reference = h.assessor.assess_files(&pack.reference_project(), &pack).unwrap();
        assert!(reference.is_consistent(), "{}: {}", pack.id, describe(&reference));
        assert!(
            reference.acceptable,
            "{} reference rejected\n{}",
            pack.id,
            describe(&reference)
        );
    }
    assert!(started.elapsed().as_secs() < 60, "took {:?}", started.elapsed());
}

/// Reference lines that the planted project lacks (counted with
/// multiplicity): the fix itself.
fn fix_lines(pack: &ChallengePack) -> Vec<String> {
    let mut out = Vec::new();
    for fixed in &pack.reference {
        let original = pack
            .file(&fixed.path)
            .map(|f| String::from_utf8_lossy(&f.contents).into_owned())
            .unwrap_or_default();
        let mut available: BTreeMap<&str, usize> = BTreeMap::new();
        for line in original.lines() {
            *available.entry(line.trim()).or_default() += 1;
        }
        for line in String::from_utf8_lossy(&fixed.contents).lines() {
            let line = line.trim();
            match available.get_mut(line) {
                Some(n) if *n > 0 => *n -= 1,
                _ if line.len() > 3 => out.push(line.to_string()),
                _ => {}
            }
        }
    }
    out
}

#[test]
fn coach_walkthrough_never_spoils_and_ends_at_the_fix() {
    let h = common::harness();
    let secret = EventSecret::new(*b"walkthrough-secret-0001").unwrap();
    for pack in code_packs() {
        let ladder = HintLadder::builtin().with_overrides(&pack.hint_overrides).unwrap();
        let flag = derive_flag(&secret, &pack.id).to_string();
        let fix = fix_lines(&pack);
        assert!(!fix.is_empty(), "{}: reference equals the planted source", pack.id);
        let planted = h.assessor.assess_files(&pack.files, &pack).unwrap();
        let target = pack.planted[0].detector.as_str();

        let mut state = CoachState::default();
        let mut levels = Vec::new();
        for n in 0..5u64 {
            state.resolve_categories(&planted);
            let hint = state
                .next_hint(&ladder, &planted, HintId(n + 1), Timestamp(n as i64))
                .unwrap();
            assert_eq!(hint.category, target, "{}: hint targets the planted weakness", pack.id);
            if hint.level < 4 {
                assert!(!hint.text.contains(&flag), "{}: hint leaks the flag", pack.id);
                for line in &fix {
                    assert!(
                        !hint.text.contains(line.as_str()),
                        "{} level {}: hint contains reference line {line:?}\n{}",
                        pack.id,
                        hint.level,
                        hint.text
                    );
                }
            }
            levels.push(hint.level);
        }
        assert_eq!(levels, [1, 2, 3, 4, 4], "{}", pack.id);

        // Applying the level-4 pattern is what the reference does.
        let fixed = h.assessor.assess_files(&pack.reference_project(), &pack).unwrap();
        assert!(fixed.acceptable, "{}", pack.id);
        state.resolve_categories(&fixed);
        assert!(state.is_resolved(target));
    }
}
