#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use csc_assess::queue::Grader;
use csc_assess::Submission;
use csc_core::{
    ChallengePack, Finding, GuidelineRef, Severity, StageResult, StageResults, Timestamp, Verdict,
};
use csc_service::{App, AppOptions, EventConfig, EventSetup, ManualClock};
use serde_json::Value;

pub const T0: i64 = 1_760_000_000;
pub const DURATION: i64 = 7200;
pub const REGISTRATION: &str = "registration-token";
pub const SECRET: &str = "test-event-secret-0123456789\n";

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

/// Writes the secret into `dir` and returns a config for the shipped corpus.
pub fn config_text(dir: &Path, corpus: &Path) -> String {
    std::fs::write(dir.join("secret.txt"), SECRET).unwrap();
    format!(
        r#"name = "Test event"
secret_file = "secret.txt"
corpus_root = "{corpus}"
log_file = "events.jsonl"
registration_token = "{REGISTRATION}"
conclusion_bonus = 25
listen = "127.0.0.1:0"

[clock]
start = {T0}
duration_s = {DURATION}

[sandbox]
jail_root = "jails"
"#,
        corpus = corpus.display()
    )
}

pub fn setup(dir: &Path) -> EventSetup {
    let path = dir.join("event.toml");
    std::fs::write(&path, config_text(dir, &corpus_dir())).unwrap();
    EventConfig::load(&path).unwrap().prepare().unwrap()
}

pub fn verdict(pack: &ChallengePack, acceptable: bool) -> Verdict {
    let passed = StageResults {
        compile: StageResult::Passed,
        functional: StageResult::Passed,
        static_analysis: StageResult::Passed,
        dynamic: StageResult::Passed,
    };
    if acceptable {
        return Verdict {
            acceptable: true,
            stage_results: passed,
            findings: Vec::new(),
            compiler_diagnostics: String::new(),
            severity_threshold: Severity::Medium,
            tests: Vec::new(),
            probes: Vec::new(),
            degraded: false,
        };
    }
    let planted = &pack.planted[0];
    Verdict {
        acceptable: false,
        stage_results: StageResults {
            static_analysis: StageResult::Failed,
            ..passed
        },
        findings: vec![Finding {
            detector_id: planted.detector,
            cwe: planted.cwe.clone(),
            guideline: GuidelineRef::cert_c("MSC00-C"),
            file: planted.file.clone(),
            line: planted.line,
            severity: Severity::High,
            message: "planted issue".into(),
        }],
        compiler_diagnostics: String::new(),
        severity_threshold: Severity::Medium,
        tests: Vec::new(),
        probes: Vec::new(),
        degraded: false,
    }
}

/// Accepts exactly the pack's reference project; anything else gets a
/// static finding at the planted location.
pub fn reference_grader() -> Arc<Grader> {
    Arc::new(|s: &Submission, p: &ChallengePack| Ok(verdict(p, s.files == p.reference_project())))
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub clock: Arc<ManualClock>,
    pub app: Arc<App>,
}

pub fn open_in(dir: &Path, clock: Arc<ManualClock>, grader: Arc<Grader>) -> Arc<App> {
    let setup = setup(dir);
    let log = dir.join("events.jsonl");
    App::open(
        setup,
        Some(&log),
        AppOptions {
            clock,
            grader,
            degraded: false,
            workers: 2,
            queue_capacity: 32,
        },
    )
    .unwrap()
}

/// An event that started ten seconds ago, graded by [`reference_grader`].
pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(Timestamp(T0 + 10)));
    let app = open_in(dir.path(), Arc::clone(&clock), reference_grader());
    Fixture { dir, clock, app }
}

pub async fn spawn_server(app: Arc<App>) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(csc_service::http::serve(app, listener, std::future::pending()));
    format!("http://{addr}")
}

pub struct Api {
    pub base: String,
    pub client: reqwest::Client,
}

impl Api {
    pub fn new(base: String) -> Self {
        Api {
            base,
            client: reqwest::Client::new(),
        }
    }

    pub async fn send(
        &self,
        method: reqwest::Method,
        path: &str,
        token: Option<&str>,
        body: Option<&Value>,
    ) -> (u16, Value) {
        let mut req = self.client.request(method, format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap();
        let value = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap_or(Value::String(text))
        };
        (status, value)
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> (u16, Value) {
        self.send(reqwest::Method::GET, path, token, None).await
    }

    pub async fn post(&self, path: &str, token: Option<&str>, body: &Value) -> (u16, Value) {
        self.send(reqwest::Method::POST, path, token, Some(body)).await
    }

    /// Registers a one-member team; returns the member's token.
    pub async fn register(&self, team: &str, player: &str) -> String {
        let (status, body) = self
            .post(
                "/api/teams",
                Some(REGISTRATION),
                &serde_json::json!({"name": team, "members": [player]}),
            )
            .await;
        assert_eq!(status, 201, "{body}");
        body["tokens"][player].as_str().unwrap().to_string()
    }

    /// Polls a submission until it leaves the queue.
    pub async fn wait_for(&self, id: u64, token: &str) -> Value {
        for _ in 0..600 {
            let (status, body) = self.get(&format!("/api/submissions/{id}"), Some(token)).await;
            assert_eq!(status, 200, "{body}");
            let state = body["status"].as_str().unwrap();
            if state != "queued" && state != "running" {
                return body;
            }
            tokio::time::sleep(std::time::Duration::from_millis(100)).await;
        }
        panic!("submission {id} never finished");
    }
}

pub fn files_json(files: &[csc_core::PackFile]) -> Value {
    Value::Array(
        files
            .iter()
            .map(|f| serde_json::json!({"path": f.path, "contents": f.text()}))
            .collect(),
    )
}
