//! Event state: game, coach, submissions and survey answers. Every change
//! is appended to one log before it is applied, and the same transition
//! function rebuilds the state from that log on start.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use csc_assess::queue::Grader;
use csc_assess::{AssessmentQueue, Assessor, CCompiler, JobEvent, Submission, SubmissionError};
use csc_core::game::Applied;
use csc_core::{
    ChallengeId, ChallengePack, CoachBook, ConclusionOutcome, EventLog, EventSecret,
    FlagOutcome, Game, GameClock, GameConfig, GameError, GameEvent, HintId, HintLadder, LogRecord,
    PackFile, PhaseKind, ScoreboardEntry, TeamId, Timestamp, Verdict,
};
use csc_sandbox::Sandbox;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::api::*;
use crate::clock::Clock;
use crate::config::{ConfigError, EventConfig, EventSetup};
use crate::survey::{self, Rounding, SurveyAggregate, SurveyResponse};

pub type SubmissionId = u64;

const MAX_NAME_CHARS: usize = 64;
const MAX_TEAM_SIZE: usize = 16;
const MAX_FLAG_CHARS: usize = 256;
const MAX_COMMENT_CHARS: usize = 2000;
const MAX_KEY_CHARS: usize = 128;

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedFile {
    pub path: String,
    #[serde(with = "b64")]
    pub contents: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum AppEvent {
    Game(GameEvent),
    TokenIssued {
        player_id: String,
        token_sha256: String,
    },
    SubmissionReceived {
        submission_id: SubmissionId,
        player_id: String,
        team_id: TeamId,
        challenge_id: ChallengeId,
        files: Vec<LoggedFile>,
        idempotency_key: Option<String>,
    },
    SubmissionSuperseded {
        submission_id: SubmissionId,
        by: SubmissionId,
    },
    VerdictRecorded {
        submission_id: SubmissionId,
        verdict: Verdict,
    },
    AssessmentFailed {
        submission_id: SubmissionId,
        reason: String,
    },
    ChallengeAnswered {
        player_id: String,
        team_id: TeamId,
        challenge_id: ChallengeId,
        correct: bool,
    },
    HintFeedback {
        hint_id: HintId,
        player_id: String,
        helpful: bool,
        comment: Option<String>,
    },
    /// Keyed digest of the player, so a second survey can be refused.
    SurveyCompleted {
        participant: String,
    },
    SurveyRecorded {
        responses: Vec<SurveyResponse>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AppError {
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("{0} not found")]
    NotFound(String),
    #[error("the event is not running")]
    Locked,
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    TooLarge(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("{0}")]
    Internal(String),
}

impl AppError {
    pub fn code(&self) -> &'static str {
        match self {
            AppError::Unauthorized => "unauthorized",
            AppError::NotFound(_) => "not_found",
            AppError::Locked => "locked",
            AppError::BadRequest(_) => "bad_request",
            AppError::Conflict(_) => "conflict",
            AppError::TooLarge(_) => "too_large",
            AppError::Unavailable(_) => "unavailable",
            AppError::Internal(_) => "internal",
        }
    }
}

impl From<GameError> for AppError {
    fn from(e: GameError) -> Self {
        match e {
            GameError::Locked => AppError::Locked,
            GameError::DuplicateName(_) | GameError::DuplicatePlayer(_) => AppError::Conflict(e.to_string()),
            GameError::EmptyName => AppError::BadRequest(e.to_string()),
            other => AppError::Internal(other.to_string()),
        }
    }
}

impl From<csc_core::LogError> for AppError {
    fn from(e: csc_core::LogError) -> Self {
        AppError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct SubmissionRecord {
    player_id: String,
    team_id: TeamId,
    challenge_id: ChallengeId,
    files: Vec<PackFile>,
    submitted_at: Timestamp,
    status: SubmissionStatus,
    verdict: Option<Verdict>,
    hint: Option<HintId>,
    error: Option<String>,
    superseded_by: Option<SubmissionId>,
}

struct State {
    game: Game,
    coach: CoachBook,
    /// Token digest to player id.
    tokens: HashMap<String, String>,
    submissions: BTreeMap<SubmissionId, SubmissionRecord>,
    idempotency: HashMap<(String, String), SubmissionId>,
    /// Challenges whose flag a team may see: acceptable verdict or correct
    /// challenge answer.
    released: BTreeSet<(TeamId, ChallengeId)>,
    surveyed: BTreeSet<String>,
    survey: Vec<SurveyResponse>,
    next_submission: SubmissionId,
}

struct Inner {
    state: State,
    log: Option<EventLog<AppEvent>>,
}

struct Content {
    packs: BTreeMap<ChallengeId, Arc<ChallengePack>>,
    ladders: BTreeMap<ChallengeId, HintLadder>,
}

/// Side effect of applying one event.
enum Effect {
    None,
    Game(Applied),
}

fn digest(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

fn random_token() -> String {
    let mut bytes = [0u8; 24];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

impl State {
    fn new(game: Game) -> Self {
        State {
            game,
            coach: CoachBook::new(),
            tokens: HashMap::new(),
            submissions: BTreeMap::new(),
            idempotency: HashMap::new(),
            released: BTreeSet::new(),
            surveyed: BTreeSet::new(),
            survey: Vec::new(),
            next_submission: 1,
        }
    }

    fn submission_mut(&mut self, id: SubmissionId) -> Result<&mut SubmissionRecord, AppError> {
        self.submissions
            .get_mut(&id)
            .ok_or_else(|| AppError::Internal(format!("event for unknown submission {id}")))
    }

    /// The one transition function for live requests and replay.
    fn apply(&mut self, content: &Content, at: Timestamp, event: &AppEvent) -> Result<Effect, AppError> {
        match event {
            AppEvent::Game(e) => return Ok(Effect::Game(self.game.apply(at, e.clone())?)),
            AppEvent::TokenIssued {
                player_id,
                token_sha256,
            } => {
                self.tokens.insert(token_sha256.clone(), player_id.clone());
            }
            AppEvent::SubmissionReceived {
                submission_id,
                player_id,
                team_id,
                challenge_id,
                files,
                idempotency_key,
            } => {
                if let Some(key) = idempotency_key {
                    self.idempotency
                        .insert((player_id.clone(), key.clone()), *submission_id);
                }
                self.submissions.insert(
                    *submission_id,
                    SubmissionRecord {
                        player_id: player_id.clone(),
                        team_id: *team_id,
                        challenge_id: challenge_id.clone(),
                        files: files
                            .iter()
                            .map(|f| PackFile::new(f.path.clone(), f.contents.clone()))
                            .collect(),
                        submitted_at: at,
                        status: SubmissionStatus::Queued,
                        verdict: None,
                        hint: None,
                        error: None,
                        superseded_by: None,
                    },
                );
                self.next_submission = self.next_submission.max(submission_id + 1);
            }
            AppEvent::SubmissionSuperseded { submission_id, by } => {
                let record = self.submission_mut(*submission_id)?;
                record.status = SubmissionStatus::Superseded;
                record.superseded_by = Some(*by);
            }
            AppEvent::VerdictRecorded {
                submission_id,
                verdict,
            } => {
                let record = self.submission_mut(*submission_id)?;
                record.status = SubmissionStatus::Finished;
                record.verdict = Some(verdict.clone());
                let (player, team, challenge) =
                    (record.player_id.clone(), record.team_id, record.challenge_id.clone());
                let ladder = content
                    .ladders
                    .get(&challenge)
                    .ok_or_else(|| AppError::Internal(format!("no ladder for {challenge}")))?;
                // A coaching failure must not make the log unreplayable.
                let hint = match self.coach.on_verdict(&player, challenge.as_str(), ladder, verdict, at) {
                    Ok(hint) => hint.map(|h| h.id),
                    Err(e) => {
                        tracing::warn!(submission = submission_id, error = %e, "no hint issued");
                        None
                    }
                };
                self.submission_mut(*submission_id)?.hint = hint;
                if verdict.acceptable {
                    self.released.insert((team, challenge));
                }
            }
            AppEvent::AssessmentFailed {
                submission_id,
                reason,
            } => {
                let record = self.submission_mut(*submission_id)?;
                record.status = SubmissionStatus::Failed;
                record.error = Some(reason.clone());
            }
            AppEvent::ChallengeAnswered {
                team_id,
                challenge_id,
                correct,
                ..
            } => {
                if *correct {
                    self.released.insert((*team_id, challenge_id.clone()));
                }
            }
            AppEvent::HintFeedback {
                hint_id,
                player_id,
                helpful,
                comment,
            } => {
                self.coach
                    .record_feedback(*hint_id, player_id, *helpful, comment.clone(), at)
                    .map_err(|e| AppError::Internal(e.to_string()))?;
            }
            AppEvent::SurveyCompleted { participant } => {
                self.surveyed.insert(participant.clone());
            }
            AppEvent::SurveyRecorded { responses } => {
                self.survey.extend(responses.iter().cloned());
            }
        }
        Ok(Effect::None)
    }

    fn is_solved(&self, team: TeamId, challenge: &ChallengeId) -> bool {
        self.game.has_solved(team, challenge) || self.released.contains(&(team, challenge.clone()))
    }

    fn team_view(&self, team: TeamId) -> TeamView {
        let t = self.game.team(team).expect("authenticated players have a team");
        TeamView {
            id: t.id,
            name: t.name.clone(),
            members: t.member_player_ids.clone(),
        }
    }
}

impl Inner {
    fn commit(&mut self, content: &Content, at: Timestamp, event: AppEvent) -> Result<Effect, AppError> {
        if let AppEvent::Game(e) = &event {
            self.state.game.preflight(at, e)?;
        }
        if let Some(log) = self.log.as_mut() {
            log.append(at, event.clone())?;
        }
        self.state.apply(content, at, &event)
    }
}

/// Comparable view of everything that must survive a restart.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub scoreboard: Vec<ScoreboardEntry>,
    pub coach: CoachBook,
    pub submissions: Vec<(SubmissionId, SubmissionStatus, Option<Verdict>, Option<HintId>)>,
    pub released: BTreeSet<(TeamId, ChallengeId)>,
    pub survey: Vec<SurveyResponse>,
}

struct Core {
    event: String,
    clock: Arc<dyn Clock>,
    game_clock: GameClock,
    registration_digest: String,
    survey_salt: Vec<u8>,
    content: Content,
    degraded: bool,
    /// Set by [`App::halt`]; nothing is recorded afterwards.
    halted: AtomicBool,
    inner: Mutex<Inner>,
}

pub struct AppOptions {
    pub clock: Arc<dyn Clock>,
    pub grader: Arc<Grader>,
    pub degraded: bool,
    pub workers: usize,
    pub queue_capacity: usize,
}

/// Builds the production grader: the sandboxed pipeline, or a static-only
/// degraded one when the host cannot isolate and the config allows it.
pub fn build_grader(config: &EventConfig) -> Result<(Arc<Grader>, bool), ConfigError> {
    let compiler = CCompiler::new(config.toolchain.clone())
        .map_err(|e| ConfigError::Invalid(format!("toolchain: {e}")))?;
    let sandbox = Sandbox::new(config.sandbox.sandbox_config())
        .map_err(|e| ConfigError::Invalid(format!("sandbox: {e}")))?;
    let sandbox = match sandbox.probe() {
        Ok(()) => Some(Arc::new(sandbox)),
        Err(e) if config.sandbox.require_isolation => {
            return Err(ConfigError::Invalid(format!(
                "{e}; set sandbox.require_isolation = false to run degraded"
            )))
        }
        Err(e) => {
            tracing::warn!(error = %e, "sandbox unavailable; only static analysis runs and verdicts are flagged degraded");
            None
        }
    };
    let degraded = sandbox.is_none();
    let assessor = Assessor::new(sandbox, Arc::new(compiler), config.sandbox.run_limits);
    let grader: Arc<Grader> = Arc::new(move |s, p| assessor.assess(s, p));
    Ok((grader, degraded))
}

pub struct App {
    core: Arc<Core>,
    queue: AssessmentQueue,
}

impl Core {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn on_job_event(&self, event: JobEvent) {
        if self.halted.load(Ordering::SeqCst) {
            return;
        }
        let mut inner = self.lock();
        let at = self.now();
        let (id, logged) = match event {
            JobEvent::Started(id) => {
                if let Some(r) = inner.state.submissions.get_mut(&id) {
                    if r.status == SubmissionStatus::Queued {
                        r.status = SubmissionStatus::Running;
                    }
                }
                return;
            }
            JobEvent::Finished(id, Ok(verdict)) => (
                id,
                AppEvent::VerdictRecorded {
                    submission_id: id,
                    verdict,
                },
            ),
            JobEvent::Finished(id, Err(reason)) => (
                id,
                AppEvent::AssessmentFailed {
                    submission_id: id,
                    reason,
                },
            ),
            JobEvent::Superseded { superseded, by } => (
                superseded,
                AppEvent::SubmissionSuperseded {
                    submission_id: superseded,
                    by,
                },
            ),
        };
        let pending = inner
            .state
            .submissions
            .get(&id)
            .is_some_and(|r| !r.status.is_terminal());
        if !pending {
            return;
        }
        if let Err(e) = inner.commit(&self.content, at, logged) {
            tracing::error!(submission = id, error = %e, "could not record assessment result");
        }
    }

    fn authenticate(&self, inner: &Inner, bearer: Option<&str>) -> Result<(String, TeamId), AppError> {
        let token = bearer.ok_or(AppError::Unauthorized)?;
        let player = inner
            .state
            .tokens
            .get(&digest(token))
            .ok_or(AppError::Unauthorized)?;
        let team = inner
            .state
            .game
            .team_of_player(player)
            .ok_or(AppError::Unauthorized)?;
        Ok((player.clone(), team))
    }

    fn pack(&self, id: &str) -> Result<&Arc<ChallengePack>, AppError> {
        ChallengeId::new(id)
            .ok()
            .and_then(|id| self.content.packs.get(&id))
            .ok_or_else(|| AppError::NotFound(format!("challenge {id}")))
    }

    fn points(&self, inner: &Inner, pack: &ChallengePack) -> u32 {
        inner.state.game.config().scoring.points(pack.difficulty)
    }

    fn summary(&self, inner: &Inner, team: TeamId, pack: &ChallengePack) -> ChallengeSummary {
        ChallengeSummary {
            id: pack.id.clone(),
            title: pack.title.clone(),
            category: pack.category,
            ctype: pack.ctype,
            difficulty: pack.difficulty.level(),
            points: self.points(inner, pack),
            solved: inner.state.is_solved(team, &pack.id),
        }
    }

    fn flag_text(&self, inner: &Inner, challenge: &ChallengeId) -> Option<String> {
        inner.state.game.flag_for(challenge).map(|f| f.to_string())
    }
}

fn check_name(what: &str, name: &str) -> Result<(), AppError> {
    let trimmed = name.trim();
    if trimmed.is_empty() || trimmed != name {
        return Err(AppError::BadRequest(format!(
            "{what} must be non-empty without surrounding spaces"
        )));
    }
    if name.chars().count() > MAX_NAME_CHARS || name.chars().any(char::is_control) {
        return Err(AppError::BadRequest(format!(
            "{what} must be at most {MAX_NAME_CHARS} printable characters"
        )));
    }
    Ok(())
}

impl App {
    /// Replays the log (if any) and starts the assessment workers.
    /// Submissions the log shows as still queued are assessed again.
    pub fn open(setup: EventSetup, log_path: Option<&Path>, options: AppOptions) -> Result<Arc<App>, AppError> {
        let EventSetup {
            config,
            secret,
            clock,
            packs,
        } = setup;
        let builtin = HintLadder::builtin();
        let mut content = Content {
            packs: BTreeMap::new(),
            ladders: BTreeMap::new(),
        };
        for pack in packs {
            let ladder = builtin
                .with_overrides(&pack.hint_overrides)
                .map_err(|e| AppError::Internal(format!("{}: {e}", pack.id)))?;
            content.ladders.insert(pack.id.clone(), ladder);
            content.packs.insert(pack.id.clone(), pack);
        }
        let mut game_config = GameConfig::new(
            clock,
            secret.clone(),
            content.packs.values().map(|p| (p.id.clone(), p.difficulty)),
        );
        game_config.conclusion_bonus = config.conclusion_bonus;
        let mut state = State::new(Game::new(game_config));
        let log = match log_path {
            Some(path) => {
                let (log, records): (EventLog<AppEvent>, Vec<LogRecord<AppEvent>>) = EventLog::open(path)?;
                for record in &records {
                    state.apply(&content, record.at, &record.event).map_err(|e| {
                        AppError::Internal(format!("replaying event {}: {e}", record.seq))
                    })?;
                }
                Some(log)
            }
            None => None,
        };
        let core = Arc::new(Core {
            event: config.name.clone(),
            clock: options.clock,
            game_clock: clock,
            registration_digest: digest(&config.registration_token),
            survey_salt: survey_salt(&secret),
            content,
            degraded: options.degraded,
            halted: AtomicBool::new(false),
            inner: Mutex::new(Inner { state, log }),
        });
        let listener_core = Arc::clone(&core);
        let queue = AssessmentQueue::new(
            options.workers,
            options.queue_capacity,
            options.grader,
            Arc::new(move |e| listener_core.on_job_event(e)),
        );
        let app = Arc::new(App { core, queue });
        let pending: Vec<(SubmissionId, Submission)> = {
            let inner = app.core.lock();
            inner
                .state
                .submissions
                .iter()
                .filter(|(_, r)| r.status == SubmissionStatus::Queued)
                .map(|(id, r)| (*id, to_submission(r)))
                .collect()
        };
        for (id, submission) in pending {
            app.enqueue(id, submission)?;
        }
        Ok(app)
    }

    /// Opens the event described by `config` with the production grader.
    pub fn start(setup: EventSetup, clock: Arc<dyn Clock>) -> Result<Arc<App>, ConfigError> {
        let (grader, degraded) = build_grader(&setup.config)?;
        let log_file = setup.config.log_file.clone();
        let options = AppOptions {
            clock,
            grader,
            degraded,
            workers: setup.config.queue.workers,
            queue_capacity: setup.config.queue.capacity,
        };
        App::open(setup, Some(&log_file), options).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    fn enqueue(&self, id: SubmissionId, submission: Submission) -> Result<(), AppError> {
        let pack = Arc::clone(&self.core.content.packs[&submission.challenge_id]);
        if let Err(e) = self.queue.submit(id, submission, pack) {
            let mut inner = self.core.lock();
            let at = self.core.now();
            inner.commit(
                &self.core.content,
                at,
                AppEvent::AssessmentFailed {
                    submission_id: id,
                    reason: e.to_string(),
                },
            )?;
            return Err(AppError::Unavailable(e.to_string()));
        }
        Ok(())
    }

    /// Stops recording, as if the process were killed: results of jobs
    /// still in flight are discarded.
    pub fn halt(&self) {
        self.core.halted.store(true, Ordering::SeqCst);
    }

    pub fn now(&self) -> Timestamp {
        self.core.now()
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            event: self.core.event.clone(),
            degraded: self.core.degraded,
        }
    }

    pub fn clock(&self) -> ClockView {
        let now = self.core.now();
        let clock = self.core.game_clock;
        ClockView {
            state: clock.state(now),
            now,
            start_at: clock.start_at,
            end_at: clock.end_at(),
        }
    }

    pub fn scoreboard(&self) -> ScoreboardView {
        let clock = self.clock();
        let entries = self.core.lock().state.game.scoreboard(clock.now);
        ScoreboardView { clock, entries }
    }

    pub fn snapshot(&self) -> Snapshot {
        let now = self.core.now();
        let inner = self.core.lock();
        let s = &inner.state;
        Snapshot {
            scoreboard: s.game.scoreboard(now),
            coach: s.coach.clone(),
            submissions: s
                .submissions
                .iter()
                .map(|(id, r)| (*id, r.status, r.verdict.clone(), r.hint))
                .collect(),
            released: s.released.clone(),
            survey: s.survey.clone(),
        }
    }

    pub fn register_team(&self, bearer: Option<&str>, req: RegisterTeam) -> Result<TeamRegistration, AppError> {
        if bearer.map(digest).as_deref() != Some(self.core.registration_digest.as_str()) {
            return Err(AppError::Unauthorized);
        }
        check_name("team name", &req.name)?;
        if req.members.is_empty() || req.members.len() > MAX_TEAM_SIZE {
            return Err(AppError::BadRequest(format!(
                "a team has 1 to {MAX_TEAM_SIZE} members"
            )));
        }
        let mut unique = BTreeSet::new();
        for m in &req.members {
            check_name("player id", m)?;
            if !unique.insert(m) {
                return Err(AppError::BadRequest(format!("player {m:?} is listed twice")));
            }
        }
        let mut inner = self.core.lock();
        let at = self.core.now();
        let team_id = inner.state.game.next_team_id();
        let registered = GameEvent::TeamRegistered {
            team_id,
            name: req.name.clone(),
        };
        inner.state.game.preflight(at, &registered)?;
        if let Some(m) = req.members.iter().find(|m| inner.state.game.team_of_player(m).is_some()) {
            return Err(AppError::Conflict(format!("player {m:?} already belongs to a team")));
        }
        let content = &self.core.content;
        inner.commit(content, at, AppEvent::Game(registered))?;
        let mut tokens = BTreeMap::new();
        for m in &req.members {
            inner.commit(
                content,
                at,
                AppEvent::Game(GameEvent::MemberAdded {
                    team_id,
                    player_id: m.clone(),
                }),
            )?;
            let token = random_token();
            inner.commit(
                content,
                at,
                AppEvent::TokenIssued {
                    player_id: m.clone(),
                    token_sha256: digest(&token),
                },
            )?;
            tokens.insert(m.clone(), token);
        }
        Ok(TeamRegistration {
            team: inner.state.team_view(team_id),
            tokens,
        })
    }

    pub fn me(&self, bearer: Option<&str>) -> Result<Me, AppError> {
        let inner = self.core.lock();
        let (player_id, team) = self.core.authenticate(&inner, bearer)?;
        Ok(Me {
            player_id,
            team: inner.state.team_view(team),
        })
    }

    pub fn challenges(&self, bearer: Option<&str>) -> Result<Vec<ChallengeSummary>, AppError> {
        let inner = self.core.lock();
        let (_, team) = self.core.authenticate(&inner, bearer)?;
        let mut packs: Vec<&Arc<ChallengePack>> = self.core.content.packs.values().collect();
        packs.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        Ok(packs
            .into_iter()
            .map(|p| self.core.summary(&inner, team, p))
            .collect())
    }

    pub fn challenge(&self, bearer: Option<&str>, id: &str) -> Result<ChallengeView, AppError> {
        let inner = self.core.lock();
        let (player, team) = self.core.authenticate(&inner, bearer)?;
        let pack = self.core.pack(id)?;
        let solved = inner.state.is_solved(team, &pack.id);
        let phases = pack
            .phases
            .iter()
            .filter(|p| solved || p.kind != PhaseKind::Conclusion)
            .map(|p| PhaseView {
                kind: p.kind,
                body: p.body.clone(),
                question: p.question.as_ref().map(|q| QuestionView {
                    prompt: q.prompt.clone(),
                    options: q.options.clone(),
                    left: q.left.clone(),
                    right: q.right.clone(),
                }),
            })
            .collect();
        let files = pack
            .files
            .iter()
            .map(|f| FileView {
                path: f.path.clone(),
                contents: f.text().into_owned(),
            })
            .collect();
        let hints = inner
            .state
            .coach
            .state(&player, pack.id.as_str())
            .map(|s| s.issued.iter().rev().cloned().collect())
            .unwrap_or_default();
        let released = inner.state.released.contains(&(team, pack.id.clone()))
            || inner.state.game.has_solved(team, &pack.id);
        Ok(ChallengeView {
            summary: self.core.summary(&inner, team, pack),
            phases,
            files,
            flag: released.then(|| self.core.flag_text(&inner, &pack.id)).flatten(),
            guidelines: if solved { pack.guideline_refs.clone() } else { Vec::new() },
            hints,
        })
    }

    pub fn answer(&self, bearer: Option<&str>, id: &str, req: AnswerRequest) -> Result<AnswerResult, AppError> {
        let mut inner = self.core.lock();
        let (player, team) = self.core.authenticate(&inner, bearer)?;
        let pack = Arc::clone(self.core.pack(id)?);
        let at = self.core.now();
        let content = &self.core.content;
        let key = pack.grading.expected_answers.for_phase(req.phase);
        match req.phase {
            PhaseKind::Introduction => Err(AppError::BadRequest("the introduction has no question".into())),
            PhaseKind::Challenge => {
                if pack.ctype.is_code_entry() {
                    return Err(AppError::BadRequest(
                        "code challenges are solved by submitting code".into(),
                    ));
                }
                let key = key.ok_or_else(|| AppError::NotFound(format!("challenge question for {id}")))?;
                if !self.core.game_clock.is_running(at) {
                    return Err(AppError::Locked);
                }
                let correct = key.accepts(&req.answer);
                inner.commit(
                    content,
                    at,
                    AppEvent::ChallengeAnswered {
                        player_id: player,
                        team_id: team,
                        challenge_id: pack.id.clone(),
                        correct,
                    },
                )?;
                Ok(AnswerResult {
                    correct,
                    flag: correct.then(|| self.core.flag_text(&inner, &pack.id)).flatten(),
                    outcome: None,
                    points: None,
                })
            }
            PhaseKind::Conclusion => {
                // Unsolved teams learn nothing about the question.
                if !inner.state.is_solved(team, &pack.id) {
                    return Ok(conclusion_result(ConclusionOutcome::NotSolved));
                }
                let key = key.ok_or_else(|| AppError::NotFound(format!("conclusion question for {id}")))?;
                let event = GameEvent::ConclusionAnswered {
                    team_id: team,
                    challenge_id: pack.id.clone(),
                    correct: key.accepts(&req.answer),
                };
                match inner.commit(content, at, AppEvent::Game(event))? {
                    Effect::Game(Applied::Conclusion(outcome)) => Ok(conclusion_result(outcome)),
                    _ => Err(AppError::Internal("conclusion answer had no outcome".into())),
                }
            }
        }
    }

    pub fn submit_flag(&self, bearer: Option<&str>, req: FlagRequest) -> Result<FlagOutcome, AppError> {
        let mut inner = self.core.lock();
        let (_, team) = self.core.authenticate(&inner, bearer)?;
        if req.flag.chars().count() > MAX_FLAG_CHARS || req.challenge_id.chars().count() > MAX_NAME_CHARS {
            return Err(AppError::BadRequest("flag or challenge id is too long".into()));
        }
        let at = self.core.now();
        let event = GameEvent::FlagSubmitted {
            team_id: team,
            challenge_id: req.challenge_id,
            flag: req.flag,
        };
        match inner.commit(&self.core.content, at, AppEvent::Game(event))? {
            Effect::Game(Applied::Flag(outcome)) => Ok(outcome),
            _ => Err(AppError::Internal("flag submission had no outcome".into())),
        }
    }

    pub fn submit_code(&self, bearer: Option<&str>, req: SubmitCode) -> Result<SubmissionAccepted, AppError> {
        let (id, submission) = {
            let mut inner = self.core.lock();
            let (player, team) = self.core.authenticate(&inner, bearer)?;
            let pack = Arc::clone(self.core.pack(req.challenge_id.as_str())?);
            let at = self.core.now();
            if !self.core.game_clock.is_running(at) {
                return Err(AppError::Locked);
            }
            if let Some(key) = &req.idempotency_key {
                if key.is_empty() || key.chars().count() > MAX_KEY_CHARS {
                    return Err(AppError::BadRequest(format!(
                        "idempotency_key must be 1 to {MAX_KEY_CHARS} characters"
                    )));
                }
                if let Some(&existing) = inner.state.idempotency.get(&(player.clone(), key.clone())) {
                    let status = inner.state.submissions[&existing].status;
                    return Ok(SubmissionAccepted {
                        submission_id: existing,
                        status,
                        duplicate: true,
                    });
                }
            }
            let files: Vec<PackFile> = req
                .files
                .into_iter()
                .map(|f| PackFile::new(f.path, f.contents.into_bytes()))
                .collect();
            let submission = Submission {
                player_id: player.clone(),
                challenge_id: pack.id.clone(),
                files,
                submitted_at: at,
            };
            submission.check_against(&pack).map_err(|e| match e {
                SubmissionError::TooLarge { .. } => AppError::TooLarge(e.to_string()),
                other => AppError::BadRequest(other.to_string()),
            })?;
            let id = inner.state.next_submission;
            inner.commit(
                &self.core.content,
                at,
                AppEvent::SubmissionReceived {
                    submission_id: id,
                    player_id: player,
                    team_id: team,
                    challenge_id: pack.id.clone(),
                    files: submission
                        .files
                        .iter()
                        .map(|f| LoggedFile {
                            path: f.path.clone(),
                            contents: f.contents.clone(),
                        })
                        .collect(),
                    idempotency_key: req.idempotency_key,
                },
            )?;
            (id, submission)
        };
        self.enqueue(id, submission)?;
        Ok(SubmissionAccepted {
            submission_id: id,
            status: SubmissionStatus::Queued,
            duplicate: false,
        })
    }

    pub fn submission(&self, bearer: Option<&str>, id: SubmissionId) -> Result<SubmissionView, AppError> {
        let inner = self.core.lock();
        let (_, team) = self.core.authenticate(&inner, bearer)?;
        let record = inner
            .state
            .submissions
            .get(&id)
            .filter(|r| r.team_id == team)
            .ok_or_else(|| AppError::NotFound(format!("submission {id}")))?;
        let acceptable = record.verdict.as_ref().is_some_and(|v| v.acceptable);
        Ok(SubmissionView {
            submission_id: id,
            challenge_id: record.challenge_id.clone(),
            player_id: record.player_id.clone(),
            submitted_at: record.submitted_at,
            status: record.status,
            verdict: record.verdict.clone(),
            hint: record.hint.and_then(|h| inner.state.coach.hint(h).cloned()),
            flag: acceptable
                .then(|| self.core.flag_text(&inner, &record.challenge_id))
                .flatten(),
            error: record.error.clone(),
            superseded_by: record.superseded_by,
        })
    }

    /// Feedback on one of the caller's own hints; a repeat replaces it.
    pub fn hint_feedback(&self, bearer: Option<&str>, hint: u64, req: FeedbackRequest) -> Result<(), AppError> {
        let mut inner = self.core.lock();
        let (player, _) = self.core.authenticate(&inner, bearer)?;
        let hint_id = HintId(hint);
        let owned = inner
            .state
            .coach
            .hint_owner(hint_id)
            .is_some_and(|(owner, _)| owner == player);
        if !owned {
            return Err(AppError::NotFound(format!("hint {hint}")));
        }
        if req.comment.as_ref().is_some_and(|c| c.chars().count() > MAX_COMMENT_CHARS) {
            return Err(AppError::BadRequest(format!(
                "comment is over {MAX_COMMENT_CHARS} characters"
            )));
        }
        let at = self.core.now();
        inner.commit(
            &self.core.content,
            at,
            AppEvent::HintFeedback {
                hint_id,
                player_id: player,
                helpful: req.helpful,
                comment: req.comment,
            },
        )?;
        Ok(())
    }

    pub fn hint_feedback_for(&self, hint: u64) -> Vec<(String, bool, Option<String>)> {
        let inner = self.core.lock();
        inner
            .state
            .coach
            .feedback_for(HintId(hint))
            .map(|(p, f)| (p.to_string(), f.helpful, f.comment.clone()))
            .collect()
    }

    pub fn submit_survey(&self, bearer: Option<&str>, form: SurveyForm) -> Result<SurveyReceipt, AppError> {
        let mut inner = self.core.lock();
        let (player, _) = self.core.authenticate(&inner, bearer)?;
        if form.answers.is_empty() {
            return Err(AppError::BadRequest("the survey needs at least one answer".into()));
        }
        let participant = keyed_digest(&self.core.survey_salt, &player);
        if inner.state.surveyed.contains(&participant) {
            return Err(AppError::Conflict("the survey was already answered".into()));
        }
        let respondent = random_token();
        let responses: Vec<SurveyResponse> = form
            .answers
            .iter()
            .map(|(&question_id, &answer)| SurveyResponse {
                respondent: respondent.clone(),
                question_id,
                answer,
                cohort: form.cohort,
            })
            .collect();
        let at = self.core.now();
        let content = &self.core.content;
        inner.commit(content, at, AppEvent::SurveyCompleted { participant })?;
        inner.commit(content, at, AppEvent::SurveyRecorded { responses })?;
        Ok(SurveyReceipt { respondent })
    }

    pub fn survey_aggregate(&self, rounding: Rounding) -> Result<SurveyAggregate, AppError> {
        let inner = self.core.lock();
        survey::aggregate(&inner.state.survey, rounding).map_err(|e| AppError::Internal(e.to_string()))
    }
}

fn conclusion_result(outcome: ConclusionOutcome) -> AnswerResult {
    let (name, points) = match outcome {
        ConclusionOutcome::Awarded { points } => ("awarded", Some(points)),
        ConclusionOutcome::Incorrect => ("incorrect", None),
        ConclusionOutcome::AlreadyAnswered => ("already_answered", None),
        ConclusionOutcome::NotSolved => ("not_solved", None),
        ConclusionOutcome::Locked => ("locked", None),
    };
    AnswerResult {
        correct: matches!(outcome, ConclusionOutcome::Awarded { .. }),
        flag: None,
        outcome: Some(name.into()),
        points,
    }
}

fn to_submission(r: &SubmissionRecord) -> Submission {
    Submission {
        player_id: r.player_id.clone(),
        challenge_id: r.challenge_id.clone(),
        files: r.files.clone(),
        submitted_at: r.submitted_at,
    }
}

fn survey_salt(secret: &EventSecret) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(b"survey-participant\0");
    h.update(secret.as_bytes());
    h.finalize().to_vec()
}

fn keyed_digest(salt: &[u8], player: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(player.as_bytes());
    hex::encode(h.finalize())
}
