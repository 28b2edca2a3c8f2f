use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::http::StatusCode;
use cfprobe::model::Model;
use cfprobe::pool::WorkerPool;
use cfprobe::subgroup::{predict_rows, RcfGroup, SubgroupRegistry};
use cfprobe::tabular::Dataset;
use cfprobe::Class;
use sha2::{Digest, Sha256};

use crate::config::ServiceConfig;
use crate::error::ApiError;

/// Session used when a request carries no `x-session-id` header.
pub const DEFAULT_SESSION: &str = "default";
pub const SESSION_HEADER: &str = "x-session-id";

#[derive(Debug, Clone)]
pub enum Job {
    Running,
    /// Serialized result, returned byte for byte on every poll.
    Done(Arc<String>),
    Failed(StatusCode, String),
}

#[derive(Debug, Default)]
pub struct Session {
    pub registry: SubgroupRegistry,
    /// Latest r-counterfactual result per (subgroup id, feature).
    pub rcf: HashMap<(u64, String), Arc<RcfGroup>>,
}

pub struct Inner {
    pub dataset: Dataset,
    pub model: Model,
    pub predictions: Vec<Class>,
    pub bin_count: usize,
    pool: WorkerPool,
    jobs: Mutex<HashMap<String, Job>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

/// Shared server state. The dataset and model are read-only; each session
/// has its own lock; jobs are keyed by a hash of their inputs so identical
/// requests share one result.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl std::ops::Deref for AppState {
    type Target = Inner;

    fn deref(&self) -> &Inner {
        &self.0
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl AppState {
    pub fn new(dataset: Dataset, model: Model, workers: usize, queue_capacity: usize, bin_count: usize) -> cfprobe::Result<Self> {
        model.check_schema(&dataset.schema)?;
        let predictions = predict_rows(&dataset, &model)?;
        let pool = WorkerPool::new(workers, queue_capacity)?;
        Ok(AppState(Arc::new(Inner {
            dataset,
            model,
            predictions,
            bin_count,
            pool,
            jobs: Mutex::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
        })))
    }

    pub fn from_config(config: &ServiceConfig) -> anyhow::Result<Self> {
        let dataset = Dataset::load(&config.dataset, &config.schema)?;
        let model = Model::load(&config.model, &dataset.schema)?;
        Ok(Self::new(dataset, model, config.workers, config.queue_capacity, config.bin_count)?)
    }

    pub fn session(&self, id: &str) -> Arc<Mutex<Session>> {
        Arc::clone(lock(&self.sessions).entry(id.to_string()).or_default())
    }

    pub fn with_session<R>(&self, id: &str, f: impl FnOnce(&mut Session) -> R) -> R {
        let session = self.session(id);
        let mut guard = lock(&session);
        f(&mut guard)
    }

    pub fn job(&self, id: &str) -> Option<Job> {
        lock(&self.jobs).get(id).cloned()
    }

    /// Starts `work` under `id` unless a job with that id already exists.
    /// The result is serialized once and stored.
    pub fn submit<T, F>(&self, id: &str, work: F) -> Result<(), ApiError>
    where
        T: serde::Serialize,
        F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    {
        {
            let mut jobs = lock(&self.jobs);
            match jobs.get(id) {
                Some(Job::Running | Job::Done(_)) => return Ok(()),
                Some(Job::Failed(..)) | None => {
                    jobs.insert(id.to_string(), Job::Running);
                }
            }
        }
        let state = self.clone();
        let key = id.to_string();
        let submitted = self.pool.submit(move || {
            let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(work));
            let job = match outcome {
                Ok(Ok(value)) => match serde_json::to_string(&value) {
                    Ok(text) => Job::Done(Arc::new(text)),
                    Err(e) => Job::Failed(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
                },
                Ok(Err(e)) => Job::Failed(e.status, e.message),
                Err(_) => Job::Failed(StatusCode::INTERNAL_SERVER_ERROR, "job panicked".into()),
            };
            lock(&state.jobs).insert(key, job);
        });
        if submitted.is_err() {
            lock(&self.jobs).remove(id);
            return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "job queue is full"));
        }
        Ok(())
    }

    pub fn pool(&self) -> &WorkerPool {
        &self.pool
    }
}

/// Short content hash used for job ids.
pub fn job_id(kind: &str, parts: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    for p in parts {
        h.update([0u8]);
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    let hex: String = digest.iter().take(12).map(|b| format!("{b:02x}")).collect();
    format!("{kind}-{hex}")
}
