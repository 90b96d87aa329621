//! Restarting from the event log, in process and after killing the server.

mod common;

use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use csc_assess::queue::Grader;
use csc_core::{derive_flag, validate_pack, ChallengeId, EventSecret, PhaseKind, Timestamp};
use csc_service::api::*;
use csc_service::{App, Clock, ManualClock};
use serde_json::json;

fn files(pack: &csc_core::ChallengePack, reference: bool) -> Vec<FileView> {
    let files = if reference { pack.reference_project() } else { pack.files.clone() };
    files
        .iter()
        .map(|f| FileView {
            path: f.path.clone(),
            contents: f.text().into_owned(),
        })
        .collect()
}

fn wait(app: &App, token: &str, id: u64) {
    let deadline = Instant::now() + Duration::from_secs(10);
    while !app.submission(Some(token), id).unwrap().status.is_terminal() {
        assert!(Instant::now() < deadline, "submission {id} did not finish");
        std::thread::sleep(Duration::from_millis(2));
    }
}

fn secret() -> EventSecret {
    EventSecret::from_file_contents(SECRET.as_bytes()).unwrap()
}

#[test]
fn restart_rebuilds_identical_scoreboard_and_coach_state() {
    let f = fixture();
    let app = &f.app;
    let reg = |name: &str, members: &[&str]| {
        app.register_team(
            Some(REGISTRATION),
            RegisterTeam {
                name: name.into(),
                members: members.iter().map(|m| m.to_string()).collect(),
            },
        )
        .unwrap()
    };
    let a = reg("Alpha", &["a1", "a2"]);
    let b = reg("Beta", &["b1"]);
    let (a1, a2, b1) = (&a.tokens["a1"], &a.tokens["a2"], &b.tokens["b1"]);
    let packs: Vec<_> = ["echo-line", "badge-printer", "grid-sum"]
        .iter()
        .map(|id| validate_pack(&corpus_dir().join(id)).unwrap())
        .collect();

    for (step, (token, pack, reference)) in [
        (a1, &packs[0], false),
        (a1, &packs[0], false),
        (a2, &packs[1], false),
        (b1, &packs[2], false),
        (b1, &packs[2], false),
        (b1, &packs[2], true),
        (a1, &packs[0], true),
    ]
    .into_iter()
    .enumerate()
    {
        f.clock.advance(7);
        let id = app
            .submit_code(
                Some(token),
                SubmitCode {
                    challenge_id: pack.id.clone(),
                    files: files(pack, reference),
                    idempotency_key: Some(format!("k{step}")),
                },
            )
            .unwrap()
            .submission_id;
        wait(app, token, id);
    }
    f.clock.advance(30);
    let flag = |id: &str| derive_flag(&secret(), &ChallengeId::new(id).unwrap()).to_string();
    for (token, id) in [(b1, "grid-sum"), (a2, "echo-line"), (a1, "web-sql-injection")] {
        f.clock.advance(5);
        app.submit_flag(
            Some(token),
            FlagRequest {
                challenge_id: id.into(),
                flag: flag(id),
            },
        )
        .unwrap();
    }
    app.submit_flag(
        Some(b1),
        FlagRequest {
            challenge_id: "echo-line".into(),
            flag: "CSC{wrong}".into(),
        },
    )
    .unwrap();
    app.answer(
        Some(b1),
        "grid-sum",
        AnswerRequest {
            phase: PhaseKind::Conclusion,
            answer: csc_core::Answer::Choices(vec![0]),
        },
    )
    .unwrap();
    let hint = app.challenge(Some(a1), "echo-line").unwrap().hints[0].id;
    app.hint_feedback(
        Some(a1),
        hint.0,
        FeedbackRequest {
            helpful: false,
            comment: Some("unclear".into()),
        },
    )
    .unwrap();
    app.submit_survey(
        Some(a2),
        SurveyForm {
            cohort: csc_service::survey::Cohort::Defensive,
            answers: [(csc_service::survey::QuestionId::Q1, 4u8.try_into().unwrap())].into(),
        },
    )
    .unwrap();

    let before = app.snapshot();
    assert!(before.scoreboard.iter().any(|e| e.total_points > 0));
    assert!(before.coach.hint(hint).is_some());
    app.halt();
    drop(f.app);

    let clock = Arc::new(ManualClock::new(f.clock.now()));
    let reopened = open_in(f.dir.path(), clock, reference_grader());
    assert_eq!(reopened.snapshot(), before);
    // Tokens, idempotency keys and the one-survey rule survive too.
    assert_eq!(reopened.me(Some(a1)).unwrap().team.name, "Alpha");
    let again = reopened
        .submit_code(
            Some(a1),
            SubmitCode {
                challenge_id: packs[0].id.clone(),
                files: files(&packs[0], false),
                idempotency_key: Some("k0".into()),
            },
        )
        .unwrap();
    assert!(again.duplicate);
    assert_eq!(
        reopened.hint_feedback_for(hint.0),
        vec![("a1".to_string(), false, Some("unclear".to_string()))]
    );
    assert!(reopened
        .submit_survey(
            Some(a2),
            SurveyForm {
                cohort: csc_service::survey::Cohort::Defensive,
                answers: [(csc_service::survey::QuestionId::Q2, 4u8.try_into().unwrap())].into(),
            },
        )
        .is_err());
}

#[test]
fn submissions_cut_off_by_a_crash_are_assessed_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(Timestamp(T0 + 10)));
    let slow: Arc<Grader> = Arc::new(|s, p| {
        std::thread::sleep(Duration::from_millis(300));
        reference_grader()(s, p)
    });
    let app = open_in(dir.path(), Arc::clone(&clock), slow);
    let reg = app
        .register_team(
            Some(REGISTRATION),
            RegisterTeam {
                name: "Crashers".into(),
                members: vec!["c1".into()],
            },
        )
        .unwrap();
    let token = &reg.tokens["c1"];
    let echo = validate_pack(&corpus_dir().join("echo-line")).unwrap();
    let id = app
        .submit_code(
            Some(token),
            SubmitCode {
                challenge_id: echo.id.clone(),
                files: files(&echo, true),
                idempotency_key: None,
            },
        )
        .unwrap()
        .submission_id;
    app.halt();
    drop(app);

    let app = open_in(dir.path(), clock, reference_grader());
    wait(&app, token, id);
    let view = app.submission(Some(token), id).unwrap();
    assert_eq!(view.status, SubmissionStatus::Finished);
    assert!(view.flag.is_some());
}

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(config: &std::path::Path) -> Server {
        let mut child = Command::new(env!("CARGO_BIN_EXE_csc"))
            .args(["serve", "--config"])
            .arg(config)
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let stderr = child.stderr.take().unwrap();
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                let _ = tx.send(line);
            }
        });
        let port = config_port(config);
        let base = format!("http://127.0.0.1:{port}");
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            if std::net::TcpStream::connect(("127.0.0.1", port)).is_ok() {
                break;
            }
            if let Some(status) = child.try_wait().unwrap() {
                let log: Vec<String> = rx.try_iter().collect();
                panic!("server exited with {status}: {}", log.join("\n"));
            }
            assert!(Instant::now() < deadline, "server did not start");
            std::thread::sleep(Duration::from_millis(50));
        }
        Server { child, base }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn config_port(config: &std::path::Path) -> u16 {
    let text = std::fs::read_to_string(config).unwrap();
    let listen = text.lines().find(|l| l.starts_with("listen")).unwrap();
    listen.trim_end_matches('"').rsplit(':').next().unwrap().parse().unwrap()
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[tokio::test(flavor = "multi_thread")]
async fn killed_server_comes_back_with_the_same_scoreboard() {
    let dir = tempfile::tempdir().unwrap();
    let now = Timestamp::now().0;
    let text = config_text(dir.path(), &corpus_dir())
        .replace(&format!("start = {T0}"), &format!("start = {}", now - 60))
        .replace("listen = \"127.0.0.1:0\"", &format!("listen = \"127.0.0.1:{}\"", free_port()));
    let config = dir.path().join("event.toml");
    std::fs::write(&config, text).unwrap();

    let server = Server::start(&config);
    let api = Api::new(server.base.clone());
    let t1 = api.register("Kappa", "k1").await;
    let t2 = api.register("Lambda", "l1").await;
    let flag = |id: &str| derive_flag(&secret(), &ChallengeId::new(id).unwrap()).to_string();
    for (token, id) in [(&t1, "echo-line"), (&t2, "grid-sum"), (&t1, "web-csrf-token")] {
        let (_, outcome) = api
            .post("/api/flags", Some(token), &json!({"challenge_id": id, "flag": flag(id)}))
            .await;
        assert_eq!(outcome["outcome"], "accepted");
    }
    let (_, before) = api.get("/api/scoreboard", None).await;
    drop(server);

    let server = Server::start(&config);
    let api = Api::new(server.base.clone());
    let (_, after) = api.get("/api/scoreboard", None).await;
    assert_eq!(after["entries"], before["entries"]);
    let (_, list) = api.get("/api/challenges", Some(&t1)).await;
    let solved: u64 = list
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["solved"] == true)
        .map(|c| c["points"].as_u64().unwrap())
        .sum();
    assert_eq!(after["entries"][0]["total_points"], solved);
    let (status, me) = api.get("/api/me", Some(&t2)).await;
    assert_eq!((status, me["team"]["name"].as_str()), (200, Some("Lambda")));
}
