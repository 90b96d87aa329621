//! Competitive state machine.
//!
//! Every mutation is a [`GameEvent`] applied by [`Game::apply`]; the same
//! function rebuilds state on replay, so a log replayed from the start yields
//! an identical scoreboard. The event window is half-open:
//! `[start, start + duration)`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::{EventLog, LogError, LogRecord};
use crate::flag::{derive_flag, EventSecret, Flag};
use crate::pack::{ChallengeId, Difficulty};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TeamId(pub u64);

impl fmt::Display for TeamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "team-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Team {
    pub id: TeamId,
    pub name: String,
    pub member_player_ids: Vec<String>,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub team_id: TeamId,
    pub challenge_id: ChallengeId,
    pub solved_at: Timestamp,
    pub points_awarded: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BonusRecord {
    pub team_id: TeamId,
    pub challenge_id: ChallengeId,
    pub awarded_at: Timestamp,
    pub points: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameClock {
    pub start_at: Timestamp,
    pub duration_s: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum CountdownState {
    Pending,
    Running { remaining_s: i64 },
    Locked,
}

impl GameClock {
    pub fn new(start_at: Timestamp, duration_s: i64) -> Result<Self, GameError> {
        if duration_s <= 0 {
            return Err(GameError::InvalidDuration(duration_s));
        }
        Ok(GameClock {
            start_at,
            duration_s,
        })
    }

    pub fn end_at(&self) -> Timestamp {
        self.start_at + self.duration_s
    }

    pub fn state(&self, now: Timestamp) -> CountdownState {
        if now < self.start_at {
            CountdownState::Pending
        } else if now < self.end_at() {
            CountdownState::Running {
                remaining_s: self.end_at() - now,
            }
        } else {
            CountdownState::Locked
        }
    }

    pub fn is_running(&self, now: Timestamp) -> bool {
        matches!(self.state(now), CountdownState::Running { .. })
    }

    pub fn is_locked(&self, now: Timestamp) -> bool {
        self.state(now) == CountdownState::Locked
    }
}

/// Points per difficulty level, indexed by `level - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scoring {
    pub per_level: [u32; 5],
}

impl Default for Scoring {
    fn default() -> Self {
        Scoring {
            per_level: [100, 200, 300, 400, 500],
        }
    }
}

impl Scoring {
    pub fn points(&self, difficulty: Difficulty) -> u32 {
        self.per_level[usize::from(difficulty.level() - 1)]
    }

    pub fn scaled(&self, factor: u32) -> Scoring {
        Scoring {
            per_level: self.per_level.map(|p| p * factor),
        }
    }
}

/// Points awarded for a first solve at `difficulty` (100 per level).
pub fn points_for(difficulty: u8) -> Result<u32, GameError> {
    let d = Difficulty::new(difficulty).map_err(|_| GameError::DifficultyOutOfRange(difficulty))?;
    Ok(Scoring::default().points(d))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreboardEntry {
    pub rank: u32,
    pub team_id: TeamId,
    pub team_name: String,
    pub total_points: u32,
    pub last_solve_at: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum GameEvent {
    TeamRegistered {
        team_id: TeamId,
        name: String,
    },
    MemberAdded {
        team_id: TeamId,
        player_id: String,
    },
    FlagSubmitted {
        team_id: TeamId,
        challenge_id: String,
        flag: String,
    },
    ConclusionAnswered {
        team_id: TeamId,
        challenge_id: ChallengeId,
        correct: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FlagOutcome {
    Accepted { points: u32 },
    Wrong,
    Duplicate,
    /// Also returned before the event starts: the dashboard is closed.
    Locked,
    UnknownChallenge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ConclusionOutcome {
    Awarded { points: u32 },
    Incorrect,
    AlreadyAnswered,
    NotSolved,
    Locked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Applied {
    Registered(Team),
    MemberAdded,
    Flag(FlagOutcome),
    Conclusion(ConclusionOutcome),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GameError {
    #[error("team name {0:?} is already taken")]
    DuplicateName(String),
    #[error("team name must not be empty")]
    EmptyName,
    #[error("the event is locked")]
    Locked,
    #[error("unknown team {0}")]
    UnknownTeam(TeamId),
    #[error("team {0} has no members")]
    NoMembers(TeamId),
    #[error("player {0:?} already belongs to a team")]
    DuplicatePlayer(String),
    #[error("replayed team id {got} does not match expected {expected}")]
    TeamIdMismatch { expected: TeamId, got: TeamId },
    #[error("difficulty {0} out of range 1..=5")]
    DifficultyOutOfRange(u8),
    #[error("duration must be positive, got {0}")]
    InvalidDuration(i64),
    #[error(transparent)]
    Log(#[from] LogErrorMessage),
}

/// `LogError` is not `Clone`; game errors carry its rendered message.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct LogErrorMessage(pub String);

impl From<LogError> for GameError {
    fn from(e: LogError) -> Self {
        GameError::Log(LogErrorMessage(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct GameConfig {
    pub clock: GameClock,
    pub secret: EventSecret,
    pub challenges: BTreeMap<ChallengeId, Difficulty>,
    pub scoring: Scoring,
    pub conclusion_bonus: u32,
}

impl GameConfig {
    pub fn new(
        clock: GameClock,
        secret: EventSecret,
        challenges: impl IntoIterator<Item = (ChallengeId, Difficulty)>,
    ) -> Self {
        GameConfig {
            clock,
            secret,
            challenges: challenges.into_iter().collect(),
            scoring: Scoring::default(),
            conclusion_bonus: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Game {
    config: GameConfig,
    flags: BTreeMap<ChallengeId, Flag>,
    teams: BTreeMap<TeamId, Team>,
    players: BTreeMap<String, TeamId>,
    solves: Vec<SolveRecord>,
    solved: BTreeSet<(TeamId, ChallengeId)>,
    bonuses: Vec<BonusRecord>,
    answered: BTreeSet<(TeamId, ChallengeId)>,
    wrong_attempts: u64,
    history: Vec<LogRecord<GameEvent>>,
}

impl Game {
    pub fn new(config: GameConfig) -> Self {
        let flags = config
            .challenges
            .keys()
            .map(|id| (id.clone(), derive_flag(&config.secret, id)))
            .collect();
        Game {
            config,
            flags,
            teams: BTreeMap::new(),
            players: BTreeMap::new(),
            solves: Vec::new(),
            solved: BTreeSet::new(),
            bonuses: Vec::new(),
            answered: BTreeSet::new(),
            wrong_attempts: 0,
            history: Vec::new(),
        }
    }

    /// Rebuilds state by applying `records` in order.
    pub fn replay<'a>(
        config: GameConfig,
        records: impl IntoIterator<Item = &'a LogRecord<GameEvent>>,
    ) -> Result<Self, GameError> {
        let mut game = Game::new(config);
        for record in records {
            game.apply(record.at, record.event.clone())?;
        }
        Ok(game)
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn clock(&self) -> &GameClock {
        &self.config.clock
    }

    pub fn countdown_state(&self, now: Timestamp) -> CountdownState {
        self.config.clock.state(now)
    }

    pub fn next_team_id(&self) -> TeamId {
        TeamId(self.teams.len() as u64 + 1)
    }

    pub fn team(&self, id: TeamId) -> Option<&Team> {
        self.teams.get(&id)
    }

    pub fn teams(&self) -> impl Iterator<Item = &Team> {
        self.teams.values()
    }

    pub fn team_of_player(&self, player_id: &str) -> Option<TeamId> {
        self.players.get(player_id).copied()
    }

    pub fn solves(&self) -> &[SolveRecord] {
        &self.solves
    }

    pub fn bonuses(&self) -> &[BonusRecord] {
        &self.bonuses
    }

    pub fn has_solved(&self, team: TeamId, challenge: &ChallengeId) -> bool {
        self.solved.contains(&(team, challenge.clone()))
    }

    pub fn wrong_attempts(&self) -> u64 {
        self.wrong_attempts
    }

    pub fn history(&self) -> &[LogRecord<GameEvent>] {
        &self.history
    }

    pub fn flag_for(&self, challenge: &ChallengeId) -> Option<&Flag> {
        self.flags.get(challenge)
    }

    pub fn total_points(&self, team: TeamId, now: Timestamp) -> u32 {
        self.scores_at(now).get(&team).map_or(0, |s| s.0)
    }

    /// Checks `event` without mutating; `apply` succeeds iff this does.
    pub fn preflight(&self, at: Timestamp, event: &GameEvent) -> Result<(), GameError> {
        match event {
            GameEvent::TeamRegistered { team_id, name } => {
                if self.config.clock.is_locked(at) {
                    return Err(GameError::Locked);
                }
                if name.trim().is_empty() {
                    return Err(GameError::EmptyName);
                }
                if self.teams.values().any(|t| t.name == *name) {
                    return Err(GameError::DuplicateName(name.clone()));
                }
                let expected = self.next_team_id();
                if *team_id != expected {
                    return Err(GameError::TeamIdMismatch {
                        expected,
                        got: *team_id,
                    });
                }
                Ok(())
            }
            GameEvent::MemberAdded { team_id, player_id } => {
                if !self.teams.contains_key(team_id) {
                    return Err(GameError::UnknownTeam(*team_id));
                }
                if self.players.contains_key(player_id) {
                    return Err(GameError::DuplicatePlayer(player_id.clone()));
                }
                Ok(())
            }
            GameEvent::FlagSubmitted { team_id, .. }
            | GameEvent::ConclusionAnswered { team_id, .. } => {
                let team = self
                    .teams
                    .get(team_id)
                    .ok_or(GameError::UnknownTeam(*team_id))?;
                if team.member_player_ids.is_empty() {
                    return Err(GameError::NoMembers(*team_id));
                }
                Ok(())
            }
        }
    }

    /// The single transition function shared by live play and replay.
    pub fn apply(&mut self, at: Timestamp, event: GameEvent) -> Result<Applied, GameError> {
        self.preflight(at, &event)?;
        let applied = match &event {
            GameEvent::TeamRegistered { team_id, name } => {
                let team = Team {
                    id: *team_id,
                    name: name.clone(),
                    member_player_ids: Vec::new(),
                    created_at: at,
                };
                self.teams.insert(*team_id, team.clone());
                Applied::Registered(team)
            }
            GameEvent::MemberAdded { team_id, player_id } => {
                self.players.insert(player_id.clone(), *team_id);
                self.teams
                    .get_mut(team_id)
                    .expect("preflight checked team")
                    .member_player_ids
                    .push(player_id.clone());
                Applied::MemberAdded
            }
            GameEvent::FlagSubmitted {
                team_id,
                challenge_id,
                flag,
            } => Applied::Flag(self.redeem(*team_id, challenge_id, flag, at)),
            GameEvent::ConclusionAnswered {
                team_id,
                challenge_id,
                correct,
            } => Applied::Conclusion(self.conclude(*team_id, challenge_id, *correct, at)),
        };
        self.history.push(LogRecord {
            seq: self.history.len() as u64,
            at,
            event,
        });
        Ok(applied)
    }

    fn redeem(&mut self, team: TeamId, challenge: &str, flag: &str, at: Timestamp) -> FlagOutcome {
        if !self.config.clock.is_running(at) {
            return FlagOutcome::Locked;
        }
        let Some((id, expected)) = ChallengeId::new(challenge)
            .ok()
            .and_then(|id| self.flags.get_key_value(&id))
        else {
            return FlagOutcome::UnknownChallenge;
        };
        if !expected.matches(flag) {
            self.wrong_attempts += 1;
            return FlagOutcome::Wrong;
        }
        let key = (team, id.clone());
        if self.solved.contains(&key) {
            return FlagOutcome::Duplicate;
        }
        let points = self.config.scoring.points(self.config.challenges[id]);
        self.solves.push(SolveRecord {
            team_id: team,
            challenge_id: id.clone(),
            solved_at: at,
            points_awarded: points,
        });
        self.solved.insert(key);
        FlagOutcome::Accepted { points }
    }

    fn conclude(
        &mut self,
        team: TeamId,
        challenge: &ChallengeId,
        correct: bool,
        at: Timestamp,
    ) -> ConclusionOutcome {
        if !self.config.clock.is_running(at) {
            return ConclusionOutcome::Locked;
        }
        let key = (team, challenge.clone());
        if !self.solved.contains(&key) {
            return ConclusionOutcome::NotSolved;
        }
        if !self.answered.insert(key) {
            return ConclusionOutcome::AlreadyAnswered;
        }
        if !correct {
            return ConclusionOutcome::Incorrect;
        }
        let points = self.config.conclusion_bonus;
        if points > 0 {
            self.bonuses.push(BonusRecord {
                team_id: team,
                challenge_id: challenge.clone(),
                awarded_at: at,
                points,
            });
        }
        ConclusionOutcome::Awarded { points }
    }

    pub fn register_team(&mut self, name: &str, now: Timestamp) -> Result<Team, GameError> {
        let event = GameEvent::TeamRegistered {
            team_id: self.next_team_id(),
            name: name.to_string(),
        };
        match self.apply(now, event)? {
            Applied::Registered(team) => Ok(team),
            other => unreachable!("registration produced {other:?}"),
        }
    }

    pub fn add_member(
        &mut self,
        team_id: TeamId,
        player_id: &str,
        now: Timestamp,
    ) -> Result<(), GameError> {
        self.apply(
            now,
            GameEvent::MemberAdded {
                team_id,
                player_id: player_id.to_string(),
            },
        )
        .map(|_| ())
    }

    pub fn submit_flag(
        &mut self,
        team_id: TeamId,
        challenge_id: &str,
        flag: &str,
        now: Timestamp,
    ) -> Result<FlagOutcome, GameError> {
        let event = GameEvent::FlagSubmitted {
            team_id,
            challenge_id: challenge_id.to_string(),
            flag: flag.to_string(),
        };
        match self.apply(now, event)? {
            Applied::Flag(outcome) => Ok(outcome),
            other => unreachable!("flag submission produced {other:?}"),
        }
    }

    pub fn answer_conclusion(
        &mut self,
        team_id: TeamId,
        challenge_id: &ChallengeId,
        correct: bool,
        now: Timestamp,
    ) -> Result<ConclusionOutcome, GameError> {
        let event = GameEvent::ConclusionAnswered {
            team_id,
            challenge_id: challenge_id.clone(),
            correct,
        };
        match self.apply(now, event)? {
            Applied::Conclusion(outcome) => Ok(outcome),
            other => unreachable!("conclusion answer produced {other:?}"),
        }
    }

    fn scores_at(&self, now: Timestamp) -> BTreeMap<TeamId, (u32, Option<Timestamp>)> {
        let mut scores: BTreeMap<TeamId, (u32, Option<Timestamp>)> = BTreeMap::new();
        let events = self
            .solves
            .iter()
            .map(|s| (s.team_id, s.solved_at, s.points_awarded))
            .chain(self.bonuses.iter().map(|b| (b.team_id, b.awarded_at, b.points)));
        for (team, at, points) in events.filter(|e| e.1 <= now) {
            let entry = scores.entry(team).or_default();
            entry.0 += points;
            entry.1 = Some(entry.1.map_or(at, |t| t.max(at)));
        }
        scores
    }

    /// Standings ordered by points (desc) then last scoring time (asc).
    /// Teams that have not scored follow in registration order. Tied teams
    /// share a rank; ranks are dense.
    pub fn scoreboard(&self, now: Timestamp) -> Vec<ScoreboardEntry> {
        let scores = self.scores_at(now);
        let mut rows: Vec<(&Team, u32, Option<Timestamp>)> = self
            .teams
            .values()
            .filter(|t| t.created_at <= now)
            .map(|t| {
                let (points, last) = scores.get(&t.id).copied().unwrap_or((0, None));
                (t, points, last)
            })
            .collect();
        rows.sort_by_key(|(team, points, last)| {
            (
                Reverse(*points),
                last.is_none(),
                *last,
                team.created_at,
                team.id,
            )
        });
        let mut out: Vec<ScoreboardEntry> = Vec::with_capacity(rows.len());
        for (team, points, last) in rows {
            let rank = match out.last() {
                None => 1,
                Some(prev) if prev.total_points == points && prev.last_solve_at == last => prev.rank,
                Some(prev) => prev.rank + 1,
            };
            out.push(ScoreboardEntry {
                rank,
                team_id: team.id,
                team_name: team.name.clone(),
                total_points: points,
                last_solve_at: last,
            });
        }
        out
    }
}

struct Shared {
    game: Game,
    log: Option<EventLog<GameEvent>>,
}

/// A [`Game`] behind a single writer lock, optionally persisted to an
/// append-only log. Events are written to the log before they are applied.
#[derive(Clone)]
pub struct SharedGame {
    inner: Arc<Mutex<Shared>>,
}

impl SharedGame {
    pub fn in_memory(config: GameConfig) -> Self {
        SharedGame {
            inner: Arc::new(Mutex::new(Shared {
                game: Game::new(config),
                log: None,
            })),
        }
    }

    /// Opens the log at `path`, replaying any records already in it.
    pub fn open(config: GameConfig, path: &Path) -> Result<Self, GameError> {
        let (log, records) = EventLog::open(path)?;
        let game = Game::replay(config, &records)?;
        Ok(SharedGame {
            inner: Arc::new(Mutex::new(Shared {
                game,
                log: Some(log),
            })),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn execute(&self, at: Timestamp, event: GameEvent) -> Result<Applied, GameError> {
        let mut shared = self.lock();
        shared.game.preflight(at, &event)?;
        if let Some(log) = shared.log.as_mut() {
            log.append(at, event.clone())?;
        }
        shared.game.apply(at, event)
    }

    pub fn register_team(&self, name: &str, now: Timestamp) -> Result<Team, GameError> {
        let mut shared = self.lock();
        let event = GameEvent::TeamRegistered {
            team_id: shared.game.next_team_id(),
            name: name.to_string(),
        };
        shared.game.preflight(now, &event)?;
        if let Some(log) = shared.log.as_mut() {
            log.append(now, event.clone())?;
        }
        match shared.game.apply(now, event)? {
            Applied::Registered(team) => Ok(team),
            other => unreachable!("registration produced {other:?}"),
        }
    }

    pub fn submit_flag(
        &self,
        team_id: TeamId,
        challenge_id: &str,
        flag: &str,
        now: Timestamp,
    ) -> Result<FlagOutcome, GameError> {
        let event = GameEvent::FlagSubmitted {
            team_id,
            challenge_id: challenge_id.to_string(),
            flag: flag.to_string(),
        };
        match self.execute(now, event)? {
            Applied::Flag(outcome) => Ok(outcome),
            other => unreachable!("flag submission produced {other:?}"),
        }
    }

    /// Runs `f` against a consistent snapshot.
    pub fn read<R>(&self, f: impl FnOnce(&Game) -> R) -> R {
        f(&self.lock().game)
    }
}
