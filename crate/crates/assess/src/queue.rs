//! Bounded worker pool for assessments.
//!
//! At most one job per (player, challenge) runs at a time and at most one
//! more waits behind it: a newer submission replaces the waiting one, whose
//! submitter is told it was superseded.

use std::collections::{HashMap, HashSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use csc_core::{ChallengeId, ChallengePack, Verdict};
use thiserror::Error;

use crate::pipeline::{AssessError, Submission};

pub type JobId = u64;

pub type Grader = dyn Fn(&Submission, &ChallengePack) -> Result<Verdict, AssessError> + Send + Sync;
pub type Listener = dyn Fn(JobEvent) + Send + Sync;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JobKey {
    pub player_id: String,
    pub challenge_id: ChallengeId,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobEvent {
    Started(JobId),
    Finished(JobId, Result<Verdict, String>),
    Superseded { superseded: JobId, by: JobId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueueError {
    #[error("assessment queue is full ({0} jobs waiting)")]
    Full(usize),
    #[error("assessment queue is shutting down")]
    ShuttingDown,
}

struct Job {
    id: JobId,
    submission: Submission,
    pack: Arc<ChallengePack>,
}

#[derive(Default)]
struct State {
    order: VecDeque<JobKey>,
    waiting: HashMap<JobKey, Job>,
    running: HashSet<JobKey>,
    shutdown: bool,
}

struct Shared {
    state: Mutex<State>,
    wake: Condvar,
    capacity: usize,
    grader: Arc<Grader>,
    listener: Arc<Listener>,
}

pub struct AssessmentQueue {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl Shared {
    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn next_job(&self) -> Option<(JobKey, Job)> {
        let mut state = self.lock();
        loop {
            let ready = state.order.iter().position(|k| !state.running.contains(k));
            if let Some(pos) = ready {
                let key = state.order.remove(pos).expect("position is in range");
                let job = state.waiting.remove(&key).expect("queued key has a job");
                state.running.insert(key.clone());
                return Some((key, job));
            }
            if state.shutdown && state.order.is_empty() {
                return None;
            }
            state = self.wake.wait(state).unwrap_or_else(|p| p.into_inner());
        }
    }

    fn work(&self) {
        while let Some((key, job)) = self.next_job() {
            (self.listener)(JobEvent::Started(job.id));
            let result = catch_unwind(AssertUnwindSafe(|| (self.grader)(&job.submission, &job.pack)));
            let result = match result {
                Ok(Ok(verdict)) => Ok(verdict),
                Ok(Err(e)) => Err(e.to_string()),
                Err(_) => Err("internal error during assessment".to_string()),
            };
            (self.listener)(JobEvent::Finished(job.id, result));
            self.lock().running.remove(&key);
            self.wake.notify_all();
        }
    }
}

impl AssessmentQueue {
    pub fn new(workers: usize, capacity: usize, grader: Arc<Grader>, listener: Arc<Listener>) -> Self {
        let shared = Arc::new(Shared {
            state: Mutex::new(State::default()),
            wake: Condvar::new(),
            capacity: capacity.max(1),
            grader,
            listener,
        });
        let workers = (0..workers.max(1))
            .map(|i| {
                let shared = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(format!("assess-{i}"))
                    .spawn(move || shared.work())
                    .expect("spawn assessment worker")
            })
            .collect();
        AssessmentQueue { shared, workers }
    }

    /// Queues a job. Returns the id of the waiting job it replaced, if any.
    pub fn submit(
        &self,
        id: JobId,
        submission: Submission,
        pack: Arc<ChallengePack>,
    ) -> Result<Option<JobId>, QueueError> {
        let key = JobKey {
            player_id: submission.player_id.clone(),
            challenge_id: submission.challenge_id.clone(),
        };
        let job = Job {
            id,
            submission,
            pack,
        };
        let replaced = {
            let mut state = self.shared.lock();
            if state.shutdown {
                return Err(QueueError::ShuttingDown);
            }
            match state.waiting.insert(key.clone(), job) {
                Some(old) => Some(old.id),
                None => {
                    if state.order.len() >= self.shared.capacity {
                        state.waiting.remove(&key);
                        return Err(QueueError::Full(state.order.len()));
                    }
                    state.order.push_back(key);
                    None
                }
            }
        };
        self.shared.wake.notify_all();
        if let Some(old) = replaced {
            (self.shared.listener)(JobEvent::Superseded {
                superseded: old,
                by: id,
            });
        }
        Ok(replaced)
    }

    /// Jobs waiting to start.
    pub fn waiting(&self) -> usize {
        self.shared.lock().order.len()
    }

    /// Finishes every queued job, then stops the workers.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.lock().shutdown = true;
        self.shared.wake.notify_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for AssessmentQueue {
    fn drop(&mut self) {
        self.stop();
    }
}
