//! Network service for secure-coding challenge events.
//!
//! [`app::App`] owns the event state and persists every change to one
//! append-only log; [`http`] exposes it as a JSON API; [`survey`] collects
//! and aggregates the post-event questionnaire.

pub mod api;
pub mod app;
pub mod clock;
pub mod config;
pub mod http;
pub mod survey;

pub use app::{App, AppError, AppEvent, AppOptions, Snapshot, SubmissionId};
pub use clock::{Clock, ManualClock, SystemClock};
pub use config::{ConfigError, EventConfig, EventSetup};
