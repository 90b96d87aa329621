//! Acceptance run: one PASS/FAIL line per criterion, then a single assert.
//! Needs root (for the sandbox) and a C compiler.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use csc_assess::{Assessor, CCompiler, ToolchainConfig};
use csc_core::coach::verdict_categories;
use csc_core::{
    derive_flag, load_corpus, points_for, ChallengeId, ChallengePack, CoachBook, CoachState,
    DetectorId, Difficulty, EventSecret, Finding, FlagOutcome, Game, GameClock, GameConfig,
    GameEvent, GuidelineRef, HintId, HintLadder, LogRecord, Severity, StageResult, StageResults,
    TeamId, Timestamp, Verdict,
};
use csc_sandbox::{
    count_processes, ExecutionRequest, Jail, Limits, Outcome, Sandbox, SandboxConfig,
};
use csc_service::app::build_grader;
use csc_service::survey::{aggregate, synthesize, Cohort, QuestionId, Rounding};
use csc_service::{App, AppOptions, ManualClock};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn code_packs() -> Vec<ChallengePack> {
    let report = load_corpus(&corpus_dir()).expect("corpus readable");
    assert!(report.is_clean(), "corpus errors: {:?}", report.errors);
    report.packs.into_iter().filter(|p| p.ctype.is_code_entry()).collect()
}

struct Harness {
    assessor: Assessor,
    _dir: tempfile::TempDir,
}

fn harness() -> Result<Harness, String> {
    let dir = tempfile::tempdir().unwrap();
    let sandbox = Sandbox::new(SandboxConfig {
        jail_root: dir.path().join("jails"),
        ..SandboxConfig::default()
    })
    .map_err(|e| e.to_string())?;
    sandbox.probe().map_err(|e| format!("sandbox unavailable: {e}"))?;
    let toolchain = CCompiler::new(ToolchainConfig::default()).map_err(|e| e.to_string())?;
    Ok(Harness {
        assessor: Assessor::new(Some(Arc::new(sandbox)), Arc::new(toolchain), Limits::default()),
        _dir: dir,
    })
}

// ---------------------------------------------------------------- survey

/// (question, cohort, [neg, neutral, pos] counts, printed percentages).
const TABLE: [(QuestionId, Cohort, [u32; 3], [f64; 3]); 17] = {
    use Cohort::*;
    use QuestionId::*;
    [
        (Q1, DefensiveOffensive, [7, 4, 45], [12.5, 7.1, 80.4]),
        (Q2, DefensiveOffensive, [0, 3, 54], [0.0, 5.3, 94.7]),
        (Q3, DefensiveOffensive, [2, 8, 46], [3.6, 14.3, 82.1]),
        (Q4, DefensiveOffensive, [5, 5, 46], [8.9, 8.9, 82.2]),
        (Q5, DefensiveOffensive, [1, 7, 48], [1.8, 12.5, 85.7]),
        (Q6, DefensiveOffensive, [5, 15, 36], [8.9, 26.8, 64.3]),
        (Q1, Defensive, [0, 2, 18], [0.0, 10.0, 90.0]),
        (Q2, Defensive, [0, 0, 25], [0.0, 0.0, 100.0]),
        (Q3, Defensive, [0, 0, 25], [0.0, 0.0, 100.0]),
        (Q4, Defensive, [2, 2, 21], [8.0, 8.0, 84.0]),
        (Q5, Defensive, [0, 0, 25], [0.0, 0.0, 100.0]),
        (Q6, Defensive, [0, 5, 20], [0.0, 20.0, 80.0]),
        (Q1, Academia, [1, 2, 13], [6.2, 12.5, 81.3]),
        (Q2, Academia, [3, 2, 11], [18.7, 12.5, 68.8]),
        (Q3, Academia, [0, 1, 15], [0.0, 6.2, 93.8]),
        (Q4, Academia, [0, 2, 14], [0.0, 12.5, 87.5]),
        (Q5, Academia, [2, 0, 14], [12.5, 0.0, 87.5]),
    ]
};

fn survey_table() -> Check {
    let started = Instant::now();
    let mut responses = Vec::new();
    for (q, cohort, counts, _) in TABLE {
        responses.extend(synthesize(&format!("{cohort:?}-{q:?}"), q, cohort, counts));
    }
    let agg = aggregate(&responses, Rounding::LargestRemainder).map_err(|e| e.to_string())?;
    let mut exact = 0;
    for (q, cohort, counts, expected) in TABLE {
        let cell = agg.cell(q, cohort);
        let shares = cell.shares.ok_or_else(|| format!("{q:?} {cohort:?} undefined"))?;
        let got = [shares.neg_pct, shares.neutral_pct, shares.pos_pct];
        let n: u32 = counts.iter().sum();
        ensure(cell.n == n && cell.counts == counts, || format!("{q:?} {cohort:?} counts {:?}", cell.counts))?;
        ensure(
            got.iter().zip(expected).all(|(g, e)| (g * 10.0).round() == (e * 10.0).round()),
            || format!("{q:?} {cohort:?}: got {got:?}, printed {expected:?} (n={n})"),
        )?;
        exact += 1;
    }
    ensure(agg.cell(QuestionId::Q6, Cohort::Academia).undefined, || {
        "academia Q6 should be undefined".into()
    })?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("{exact}/17 cells exact to one decimal in {elapsed:?}"))
}

// ---------------------------------------------------------------- corpus

fn corpus_soundness(h: &Harness) -> Check {
    let started = Instant::now();
    let packs = code_packs();
    ensure(packs.len() >= 8, || format!("only {} code_entry packs", packs.len()))?;
    let detectors: BTreeSet<DetectorId> =
        packs.iter().flat_map(|p| p.planted.iter().map(|v| v.detector)).collect();
    ensure(detectors.len() == DetectorId::BUILTIN.len(), || {
        format!("planted detectors {detectors:?}")
    })?;
    let (mut rejected, mut accepted) = (0, 0);
    for pack in &packs {
        let planted = h.assessor.assess_files(&pack.files, pack).map_err(|e| e.to_string())?;
        ensure(!planted.acceptable && planted.is_consistent(), || {
            format!("{}: planted source accepted", pack.id)
        })?;
        for plant in &pack.planted {
            ensure(
                planted.findings.iter().any(|f| {
                    f.detector_id == plant.detector && f.cwe == plant.cwe && f.file == plant.file && f.line == plant.line
                }),
                || format!("{}: planted {} at {}:{} not reported", pack.id, plant.cwe, plant.file, plant.line),
            )?;
        }
        rejected += 1;
        let reference = h
            .assessor
            .assess_files(&pack.reference_project(), pack)
            .map_err(|e| e.to_string())?;
        ensure(reference.acceptable && reference.is_consistent(), || {
            format!("{}: reference rejected: {:?} {:?}", pack.id, reference.stage_results, reference.findings)
        })?;
        accepted += 1;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{rejected}/{n} planted rejected with their CWE, {accepted}/{n} references accepted, {} detectors, {elapsed:.1?}",
        detectors.len(),
        n = packs.len()
    ))
}

// ---------------------------------------------------------------- game

const START: i64 = 10_000;
const LENGTH: i64 = 900;
const GAME_CHALLENGES: [(&str, u8); 5] = [("a", 1), ("b", 2), ("c", 3), ("d", 4), ("e", 5)];

fn game_config() -> GameConfig {
    GameConfig::new(
        GameClock::new(Timestamp(START), LENGTH).unwrap(),
        EventSecret::new(*b"acceptance-game-secret").unwrap(),
        GAME_CHALLENGES
            .iter()
            .map(|(id, d)| (ChallengeId::new(*id).unwrap(), Difficulty::new(*d).unwrap())),
    )
}

fn game_properties() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let (mut submissions, mut post_lock, mut post_lock_rejected) = (0usize, 0usize, 0usize);
    for case in 0..1000 {
        let mut game = Game::new(game_config());
        let teams = rng.gen_range(1..=6u64);
        for t in 0..teams {
            let team = game.register_team(&format!("team-{t}"), Timestamp(START - 100)).unwrap();
            game.add_member(team.id, &format!("p-{t}"), Timestamp(START - 100)).unwrap();
        }
        let mut at = START + rng.gen_range(-120..200);
        for _ in 0..rng.gen_range(0..120) {
            at += rng.gen_range(0..30);
            let team = TeamId(rng.gen_range(1..=teams));
            let (id, d) = GAME_CHALLENGES[rng.gen_range(0..GAME_CHALLENGES.len())];
            let flag = match rng.gen_range(0..10) {
                0..=5 => game.flag_for(&ChallengeId::new(id).unwrap()).unwrap().to_string(),
                6..=8 => format!("CSC{{{:032x}}}", rng.gen::<u128>()),
                _ => "not a flag".into(),
            };
            let challenge = if rng.gen_ratio(1, 20) { "missing" } else { id };
            let outcome = game.submit_flag(team, challenge, &flag, Timestamp(at)).unwrap();
            submissions += 1;
            if at >= START + LENGTH {
                post_lock += 1;
                if outcome == FlagOutcome::Locked {
                    post_lock_rejected += 1;
                }
            }
            if let FlagOutcome::Accepted { points } = outcome {
                ensure(points == points_for(d).unwrap(), || format!("case {case}: {points} for level {d}"))?;
            }
        }

        let text = serde_json::to_string(game.history()).unwrap();
        let records: Vec<LogRecord<GameEvent>> = serde_json::from_str(&text).unwrap();
        let replayed = Game::replay(game_config(), &records).map_err(|e| format!("case {case}: {e}"))?;
        for now in [START - 1, START + LENGTH / 2, START + LENGTH, START + 10 * LENGTH] {
            ensure(game.scoreboard(Timestamp(now)) == replayed.scoreboard(Timestamp(now)), || {
                format!("case {case}: scoreboards differ at {now}")
            })?;
        }
        let mut seen = BTreeSet::new();
        for s in replayed.solves() {
            ensure(seen.insert((s.team_id, s.challenge_id.clone())), || {
                format!("case {case}: {:?} scored {} twice", s.team_id, s.challenge_id)
            })?;
        }
    }
    ensure(post_lock > 0 && post_lock_rejected == post_lock, || {
        format!("{post_lock_rejected}/{post_lock} post-lock submissions rejected")
    })?;
    Ok(format!(
        "1000 logs ({submissions} submissions) replay identically, 0 double scores, {post_lock_rejected}/{post_lock} post-lock rejected"
    ))
}

// ---------------------------------------------------------------- coach

fn random_verdict(rng: &mut StdRng) -> Verdict {
    let findings: Vec<Finding> = (0..rng.gen_range(0..4))
        .map(|_| Finding {
            detector_id: DetectorId::BUILTIN[rng.gen_range(0..5)],
            cwe: "CWE-120".into(),
            guideline: GuidelineRef::cert_c("STR31-C"),
            file: "main.c".into(),
            line: rng.gen_range(1..40),
            severity: [Severity::Low, Severity::Medium, Severity::High][rng.gen_range(0..3)],
            message: "m".into(),
        })
        .collect();
    let blocking = findings.iter().any(|f| f.severity >= Severity::Medium);
    let mut s = StageResults {
        compile: StageResult::Passed,
        functional: StageResult::Passed,
        static_analysis: if blocking { StageResult::Failed } else { StageResult::Passed },
        dynamic: StageResult::Passed,
    };
    match rng.gen_range(0..6) {
        0 => {
            s.compile = StageResult::Failed;
            s.functional = StageResult::Skipped;
            s.dynamic = StageResult::Skipped;
        }
        1 => {
            s.functional = StageResult::Failed;
            s.dynamic = StageResult::Skipped;
        }
        2 => s.dynamic = StageResult::Failed,
        _ => {}
    }
    Verdict {
        acceptable: s.iter().all(|r| r == StageResult::Passed),
        stage_results: s,
        findings,
        compiler_diagnostics: "main.c:1:1: error: x".into(),
        severity_threshold: Severity::Medium,
        tests: vec![],
        probes: vec![],
        degraded: false,
    }
}

fn coach_escalation() -> Result<(usize, usize), String> {
    let mut rng = StdRng::seed_from_u64(0xc0ac);
    let ladder = HintLadder::builtin();
    let mut saturated = 0;
    let mut hints = 0;
    for case in 0..500 {
        let mut book = CoachBook::new();
        let mut last: BTreeMap<String, (u8, bool)> = BTreeMap::new();
        for i in 0..rng.gen_range(1..30) {
            let v = random_verdict(&mut rng);
            let present = verdict_categories(&v);
            for (category, (_, persisted)) in last.iter_mut() {
                if v.acceptable || !present.contains(category) {
                    *persisted = false;
                }
            }
            let hint = book
                .on_verdict("p", "c", &ladder, &v, Timestamp(i))
                .map_err(|e| format!("case {case}: {e}"))?;
            ensure(hint.is_some() == !v.acceptable, || format!("case {case}: hint count"))?;
            let Some(h) = hint else { continue };
            hints += 1;
            let expected = match last.get(&h.category) {
                None => 1,
                Some(&(before, true)) => (before + 1).min(4),
                Some(&(before, false)) => before,
            };
            ensure(h.level == expected, || {
                format!("case {case}: {} got level {}, expected {expected}", h.category, h.level)
            })?;
            if matches!(last.get(&h.category), Some(&(4, true))) {
                saturated += 1;
            }
            last.insert(h.category.clone(), (h.level, true));
        }
    }
    ensure(saturated > 0, || "no sequence reached saturation".into())?;
    Ok((hints, saturated))
}

/// Reference lines the planted project lacks: the fix itself.
fn fix_lines(pack: &ChallengePack) -> Vec<String> {
    let mut out = Vec::new();
    for fixed in &pack.reference {
        let original = pack.file(&fixed.path).map(|f| f.text().into_owned()).unwrap_or_default();
        let mut available: BTreeMap<&str, usize> = BTreeMap::new();
        for line in original.lines() {
            *available.entry(line.trim()).or_default() += 1;
        }
        for line in fixed.text().lines() {
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

fn no_spoilers(h: &Harness) -> Result<usize, String> {
    let secret = EventSecret::from_file_contents(SECRET.as_bytes()).unwrap();
    let mut checked = 0;
    for pack in code_packs() {
        let ladder = HintLadder::builtin()
            .with_overrides(&pack.hint_overrides)
            .map_err(|e| e.to_string())?;
        let flag = derive_flag(&secret, &pack.id).to_string();
        let fix = fix_lines(&pack);
        let planted = h.assessor.assess_files(&pack.files, &pack).map_err(|e| e.to_string())?;
        let mut state = CoachState::default();
        for n in 0..4u64 {
            state.resolve_categories(&planted);
            let hint = state
                .next_hint(&ladder, &planted, HintId(n + 1), Timestamp(n as i64))
                .map_err(|e| e.to_string())?;
            if hint.level >= 4 {
                continue;
            }
            ensure(!hint.text.contains(&flag), || format!("{} level {} leaks the flag", pack.id, hint.level))?;
            for line in &fix {
                ensure(!hint.text.contains(line.as_str()), || {
                    format!("{} level {} contains reference line {line:?}", pack.id, hint.level)
                })?;
            }
            checked += 1;
        }
    }
    Ok(checked)
}

fn coach_properties(h: &Harness) -> Check {
    let (hints, saturated) = coach_escalation()?;
    let checked = no_spoilers(h)?;
    Ok(format!(
        "500 sequences, {hints} hints follow the ladder, {saturated} saturated repeats; {checked} corpus hints spoiler-free"
    ))
}

// ---------------------------------------------------------------- sandbox

fn host_processes() -> usize {
    fs::read_dir("/proc")
        .unwrap()
        .flatten()
        .filter(|e| e.file_name().to_str().is_some_and(|n| n.bytes().all(|b| b.is_ascii_digit())))
        .count()
}

fn within(actual: u64, limit: u64) -> bool {
    actual * 10 <= limit * 11
}

struct RedTeam {
    dir: tempfile::TempDir,
    sandbox: Sandbox,
    jail: Jail,
}

impl RedTeam {
    fn compile(&self, name: &str, source: &str) -> Result<String, String> {
        let src = self.dir.path().join(format!("{name}.c"));
        fs::write(&src, source).unwrap();
        let status = Command::new("cc")
            .arg("-O0")
            .arg("-o")
            .arg(self.jail.work().join(name))
            .arg(&src)
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("{name} failed to compile"))?;
        Ok(format!("/work/{name}"))
    }

    fn run(&self, req: ExecutionRequest) -> Result<csc_sandbox::ExecutionResult, String> {
        self.sandbox.execute(&self.jail, &req).map_err(|e| e.to_string())
    }

    fn back_to_baseline(&self, what: &str, baseline: usize) -> Result<(), String> {
        for uid in self.sandbox.slot_uids() {
            ensure(count_processes(uid) == 0, || format!("{what}: processes left for uid {uid}"))?;
        }
        // Unrelated host activity can briefly add processes; allow it to settle.
        let deadline = Instant::now() + Duration::from_secs(2);
        while host_processes() > baseline && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(20));
        }
        let now = host_processes();
        ensure(now <= baseline, || format!("{what}: host processes {baseline} -> {now}"))
    }
}

const ESCAPE: &str = r#"
#include <stdio.h>
#include <unistd.h>
#include <fcntl.h>
#include <sys/stat.h>
static void dump(const char *p) {
    char buf[256];
    int fd = open(p, O_RDONLY);
    if (fd < 0) return;
    ssize_t n = read(fd, buf, sizeof buf);
    if (n > 0) fwrite(buf, 1, (size_t)n, stdout);
    close(fd);
}
int main(int argc, char **argv) {
    const char *target = argv[1];
    char path[4096];
    dump(target);
    snprintf(path, sizeof path, "../../../../../..%s", target); dump(path);
    snprintf(path, sizeof path, "/proc/1/root%s", target); dump(path);
    mkdir("/tmp/x", 0700);
    if (chroot("/tmp/x") == 0) {
        for (int i = 0; i < 64; i++) chdir("..");
        chroot(".");
        dump(target);
    }
    return 0;
}
"#;

const NETWORK: &str = r#"
#include <stdio.h>
#include <string.h>
#include <unistd.h>
#include <arpa/inet.h>
#include <sys/socket.h>
static int attempt(const char *ip, int port) {
    int s = socket(AF_INET, SOCK_STREAM, 0);
    if (s < 0) return 0;
    struct sockaddr_in a;
    memset(&a, 0, sizeof a);
    a.sin_family = AF_INET;
    a.sin_port = htons(port);
    inet_pton(AF_INET, ip, &a.sin_addr);
    int ok = connect(s, (struct sockaddr *)&a, sizeof a) == 0;
    close(s);
    return ok;
}
int main(void) {
    int any = attempt("1.1.1.1", 80) | attempt("8.8.8.8", 53) | attempt("127.0.0.1", 22);
    puts(any ? "connected" : "blocked");
    return 0;
}
"#;

const FORK_BOMB: &str = "#include <unistd.h>\nint main(void) { for (;;) fork(); }\n";

const MEMORY_BOMB: &str = r#"
#include <stdlib.h>
#include <string.h>
int main(void) {
    for (;;) {
        char *p = malloc(1 << 20);
        memset(p, 1, 1 << 20);
    }
}
"#;

fn sandbox_red_team() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let sandbox = Sandbox::new(SandboxConfig {
        jail_root: dir.path().join("jails"),
        ..SandboxConfig::default()
    })
    .map_err(|e| e.to_string())?;
    sandbox.probe().map_err(|e| format!("sandbox unavailable: {e}"))?;
    let jail = sandbox.prepare_jail([("input.txt", b"x\n".as_slice())]).map_err(|e| e.to_string())?;
    let rt = RedTeam { dir, sandbox, jail };
    let mut notes = Vec::new();

    let sentinel = rt.dir.path().join("sentinel");
    fs::write(&sentinel, "SENTINEL-acceptance-91c2").unwrap();
    let prog = rt.compile("escape", ESCAPE)?;
    let baseline = host_processes();
    let r = rt.run(ExecutionRequest::new([prog, sentinel.display().to_string()]))?;
    ensure(r.outcome == Outcome::Exited(0), || format!("escape: {:?}", r.outcome))?;
    ensure(!String::from_utf8_lossy(&r.stdout).contains("SENTINEL"), || "escape: sentinel read".into())?;
    rt.back_to_baseline("escape", baseline)?;
    notes.push("file-escape blocked".to_string());

    let prog = rt.compile("net", NETWORK)?;
    let baseline = host_processes();
    let r = rt.run(ExecutionRequest::new([prog]))?;
    ensure(r.stdout == b"blocked\n", || format!("network: {}", String::from_utf8_lossy(&r.stdout)))?;
    rt.back_to_baseline("network", baseline)?;
    notes.push("network blocked".to_string());

    let prog = rt.compile("bomb", FORK_BOMB)?;
    let limits = Limits {
        cpu_ms: 1000,
        wall_ms: 3000,
        ..Limits::default()
    };
    let baseline = host_processes();
    let started = Instant::now();
    let r = rt.run(ExecutionRequest::new([prog]).limits(limits))?;
    let wall = started.elapsed().as_millis() as u64;
    ensure(
        matches!(r.outcome, Outcome::Signaled(_) | Outcome::TimeoutCpu | Outcome::TimeoutWall),
        || format!("fork bomb: {:?}", r.outcome),
    )?;
    ensure(within(wall, limits.wall_ms), || format!("fork bomb ran {wall} ms"))?;
    rt.back_to_baseline("fork bomb", baseline)?;
    notes.push(format!("fork bomb stopped after {wall} ms"));

    let prog = rt.compile("membomb", MEMORY_BOMB)?;
    let limits = Limits {
        mem_bytes: 64 << 20,
        ..Limits::default()
    };
    let baseline = host_processes();
    let r = rt.run(ExecutionRequest::new([prog]).limits(limits))?;
    let rss = r.usage.max_rss_bytes;
    ensure(r.outcome == Outcome::MemExceeded, || format!("memory bomb: {:?}", r.outcome))?;
    ensure(within(rss, limits.mem_bytes), || format!("memory bomb rss {rss}"))?;
    rt.back_to_baseline("memory bomb", baseline)?;
    notes.push(format!("memory bomb capped at {} MiB", rss >> 20));

    let baseline = host_processes();
    let r = rt.run(ExecutionRequest::new(["sh", "-c", "head -c 10000000 /dev/zero"]))?;
    let cap = 64 * 1024;
    ensure(r.stdout.len() == cap && r.stdout_truncated, || format!("flood kept {} bytes", r.stdout.len()))?;
    rt.back_to_baseline("output flood", baseline)?;
    notes.push(format!("output flood truncated to {} KiB", cap / 1024));

    let _ = rt.jail.destroy();
    Ok(notes.join(", "))
}

// ---------------------------------------------------------------- end to end

async fn end_to_end() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let setup = setup(dir.path());
    let (grader, degraded) = build_grader(&setup.config).map_err(|e| e.to_string())?;
    ensure(!degraded, || "grader runs without isolation".into())?;
    let app = App::open(
        setup,
        Some(&dir.path().join("events.jsonl")),
        AppOptions {
            clock: Arc::new(ManualClock::new(Timestamp(T0 + 10))),
            grader,
            degraded,
            workers: 2,
            queue_capacity: 32,
        },
    )
    .map_err(|e| e.to_string())?;
    let api = Api::new(spawn_server(app).await);
    let pack = csc_core::validate_pack(&corpus_dir().join("echo-line")).unwrap();

    let token = api.register("Headless", "h1").await;
    let (status, challenge) = api.get("/api/challenges/echo-line", Some(&token)).await;
    ensure(status == 200, || format!("challenge: {status}"))?;
    let difficulty = challenge["difficulty"].as_u64().unwrap() as u8;

    let submit = |files: Value| {
        let api = &api;
        let token = &token;
        async move {
            let (status, body) = api
                .post("/api/submissions", Some(token), &json!({"challenge_id": "echo-line", "files": files}))
                .await;
            assert_eq!(status, 202, "{body}");
            api.wait_for(body["submission_id"].as_u64().unwrap(), token).await
        }
    };
    let vulnerable = submit(files_json(&pack.files)).await;
    ensure(vulnerable["verdict"]["acceptable"] == false, || "vulnerable source accepted".into())?;
    let hint = vulnerable["hint"]["text"].as_str().unwrap_or_default().to_string();
    ensure(!hint.is_empty(), || format!("no hint: {vulnerable}"))?;

    let fixed = submit(files_json(&pack.reference_project())).await;
    ensure(fixed["verdict"]["acceptable"] == true, || format!("reference rejected: {fixed}"))?;
    let flag = fixed["flag"].as_str().ok_or("no flag released")?.to_string();

    let (_, before) = api.get("/api/scoreboard", None).await;
    let points_before = before["entries"][0]["total_points"].as_u64().unwrap();
    let (status, outcome) = api
        .post("/api/flags", Some(&token), &json!({"challenge_id": "echo-line", "flag": flag}))
        .await;
    ensure(status == 200 && outcome["outcome"] == "accepted", || format!("redeem: {outcome}"))?;
    let (_, after) = api.get("/api/scoreboard", None).await;
    let points_after = after["entries"][0]["total_points"].as_u64().unwrap();
    let expected = u64::from(points_for(difficulty).unwrap());
    ensure(points_after - points_before == expected, || {
        format!("scoreboard {points_before} -> {points_after}, expected +{expected}")
    })?;
    Ok(format!(
        "hint level {} after vulnerable submission, flag released and redeemed, scoreboard +{expected}",
        vulnerable["hint"]["level"]
    ))
}

// ---------------------------------------------------------------- driver

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

#[test]
fn acceptance() {
    let harness = harness();
    let with_harness = |f: fn(&Harness) -> Check| match &harness {
        Ok(h) => guarded(|| f(h)),
        Err(e) => Err(e.clone()),
    };
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let results = [
        ("survey-arithmetic", guarded(survey_table)),
        ("fixture-corpus", with_harness(corpus_soundness)),
        ("game-state", guarded(game_properties)),
        ("coach", with_harness(coach_properties)),
        ("sandbox-red-team", guarded(sandbox_red_team)),
        ("end-to-end", guarded(|| runtime.block_on(end_to_end()))),
    ];
    // Straight to the process stdout so the lines survive output capture.
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (name, result) in &results {
        match result {
            Ok(detail) => writeln!(out, "PASS {name}: {detail}").unwrap(),
            Err(why) => {
                writeln!(out, "FAIL {name}: {why}").unwrap();
                failed.push(*name);
            }
        }
    }
    drop(out);
    assert!(failed.is_empty(), "failed: {failed:?}");
}
