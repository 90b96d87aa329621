//! Domain core for secure-coding challenge events.
//!
//! * [`pack`] and [`validate`] define and load challenge packs, the content
//!   unit of an event (three presentation phases, six challenge types).
//! * [`flag`] derives the per-challenge flag from the event secret.
//! * [`game`] is the competitive state machine: teams, flag redemption,
//!   difficulty-weighted scoring, countdown lockout and the scoreboard.
//! * [`verdict`] holds the findings and verdicts produced by the grading
//!   pipeline, and [`coach`] turns an unacceptable verdict into one hint.
//! * [`eventlog`] is the append-only JSON-lines log every mutation is
//!   persisted to and replayed from.

pub mod coach;
pub mod eventlog;
pub mod flag;
pub mod game;
pub mod pack;
pub mod time;
pub mod validate;
pub mod verdict;

pub use coach::{CoachBook, CoachError, CoachState, Hint, HintId, HintLadder};
pub use eventlog::{EventLog, LogError, LogRecord};
pub use flag::{derive_flag, EventSecret, Flag, FlagError};
pub use game::{
    points_for, ConclusionOutcome, CountdownState, FlagOutcome, Game, GameClock, GameConfig, GameError, GameEvent,
    ScoreboardEntry, SharedGame, SolveRecord, Team, TeamId,
};
pub use pack::{
    Answer, AnswerKey, Category, ChallengeId, ChallengePack, ChallengeType, Difficulty,
    ExpectedAnswers, FunctionalTest, GradingSpec, GuidelineRef, GuidelineStandard, LadderOverride,
    PackFile, Phase, PhaseKind, PlantedVulnerability, ProbeSpec, QuestionSpec,
};
pub use time::Timestamp;
pub use validate::{load_corpus, validate_pack, write_pack, CorpusReport, ValidationError};
pub use verdict::{
    DetectorId, Finding, ProbeOutcome, ProbeReport, Severity, StageResult, StageResults,
    TestOutcome, TestReport, Verdict,
};
