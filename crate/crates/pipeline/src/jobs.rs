//! Operations queued for a single worker thread, polled by id.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;
use crate::ops::Operation;
use crate::workspace::Workspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_finished(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: u64,
    pub kind: String,
    pub state: JobState,
    pub progress: f64,
    pub result: Option<Value>,
    pub error: Option<String>,
}

impl Job {
    fn advance(&mut self, state: JobState) {
        assert!(state > self.state, "job {} cannot go from {:?} to {:?}", self.job_id, self.state, state);
        self.state = state;
        if state.is_finished() {
            self.progress = 1.0;
        }
    }
}

struct Shared {
    jobs: Mutex<BTreeMap<u64, Job>>,
    changed: Condvar,
}

/// Job registry plus the worker that runs queued operations in order.
#[derive(Clone)]
pub struct JobQueue {
    shared: Arc<Shared>,
    workspace: Arc<Workspace>,
    tx: Sender<(u64, Operation)>,
    next: Arc<AtomicU64>,
}

impl JobQueue {
    pub fn start(workspace: Arc<Workspace>) -> Self {
        let shared = Arc::new(Shared {
            jobs: Mutex::new(BTreeMap::new()),
            changed: Condvar::new(),
        });
        let (tx, rx) = mpsc::channel::<(u64, Operation)>();
        let (worker_shared, worker_ws) = (shared.clone(), workspace.clone());
        thread::Builder::new()
            .name("roomtrace-worker".into())
            .spawn(move || {
                let update = |id: u64, f: &dyn Fn(&mut Job)| {
                    let mut jobs = worker_shared.jobs.lock().expect("job lock");
                    if let Some(job) = jobs.get_mut(&id) {
                        f(job);
                    }
                    worker_shared.changed.notify_all();
                };
                for (id, op) in rx {
                    update(id, &|j| j.advance(JobState::Running));
                    let outcome = worker_ws.apply(op);
                    update(id, &|j| match &outcome {
                        Ok(value) => {
                            j.result = Some(value.clone());
                            j.advance(JobState::Done);
                        }
                        Err(e) => {
                            j.error = Some(e.to_string());
                            j.advance(JobState::Failed);
                        }
                    });
                }
            })
            .expect("spawn worker thread");
        Self {
            shared,
            workspace,
            tx,
            next: Arc::new(AtomicU64::new(1)),
        }
    }

    pub fn workspace(&self) -> &Arc<Workspace> {
        &self.workspace
    }

    /// Queues `op` after checking its prerequisites against the current state.
    pub fn submit(&self, op: Operation) -> Result<Job> {
        op.check_prerequisites(&self.workspace.snapshot())?;
        let job = Job {
            job_id: self.next.fetch_add(1, Ordering::Relaxed),
            kind: op.name().to_string(),
            state: JobState::Queued,
            progress: 0.0,
            result: None,
            error: None,
        };
        self.shared.jobs.lock().expect("job lock").insert(job.job_id, job.clone());
        self.tx.send((job.job_id, op)).expect("worker thread alive");
        Ok(job)
    }

    pub fn run_stage(&self, stage: &str, params: Value) -> Result<Job> {
        self.submit(Operation::from_stage(stage, params)?)
    }

    pub fn get(&self, id: u64) -> Option<Job> {
        self.shared.jobs.lock().expect("job lock").get(&id).cloned()
    }

    /// Blocks until the job finishes or `timeout` passes; returns its last state.
    pub fn wait(&self, id: u64, timeout: Duration) -> Option<Job> {
        let deadline = Instant::now() + timeout;
        let mut jobs = self.shared.jobs.lock().expect("job lock");
        loop {
            let job = jobs.get(&id)?.clone();
            let now = Instant::now();
            if job.state.is_finished() || now >= deadline {
                return Some(job);
            }
            jobs = self.shared.changed.wait_timeout(jobs, deadline - now).expect("job lock").0;
        }
    }
}
