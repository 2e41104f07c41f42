//! State machine behind the live annotation service: a pre-sampled pool of
//! queries per task, dealt sequentially under expiring leases so that every
//! query is answered by at most one annotator.
//!
//! Each query moves `unassigned → leased → (answered | unassigned)`. All
//! transitions of one task serialize through that task's lock, and answers
//! reach the event log before they are acknowledged.

mod log;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use self::log::{read_events, Choice, Event, EventLog, ResponseRecord, TaskCreated, EVENT_LOG};
use crate::error::Error;
use crate::signal::{StimulusEntry, StimulusManifest};
use crate::triplet::{
    fuse, sample_triplets, triplet_budget, LabeledTriplet, LabeledTripletSet, Source, TripletQuery,
};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("task {0:?} not found")]
    NotFound(String),
    #[error("task {0:?} already exists")]
    DuplicateTask(String),
    #[error("query {0} is not part of this task")]
    UnknownQuery(TripletQuery),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("gone: {0}")]
    Gone(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] Error),
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Hand-driven clock for tests and simulations.
#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub lease_timeout_ms: u64,
    /// Late submissions on an expired lease are still accepted this long after expiry.
    pub grace_ms: u64,
    /// fsync the log before acknowledging.
    pub sync: bool,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            lease_timeout_ms: 120_000,
            grace_ms: 30_000,
            sync: true,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct CreateTask {
    #[serde(default)]
    pub task_id: Option<String>,
    pub manifest: StimulusManifest,
    /// Number of queries; alternatively give `k` for `round(K n ln n)`.
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default)]
    pub k: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lease_timeout_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Lease {
    annotator: String,
    expires: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Status {
    Unassigned,
    Leased(Lease),
    Answered(usize),
}

/// What a query looks like to the annotator: reference `i`, option A = `j`, option B = `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub task_id: String,
    pub position: usize,
    pub query: TripletQuery,
    pub reference: StimulusEntry,
    pub option_a: StimulusEntry,
    pub option_b: StimulusEntry,
    pub lease_expires_at: u64,
    pub answered: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextQuery {
    Query(Assignment),
    /// Nothing left to deal; `outstanding` queries are still leased to others.
    NoWork { outstanding: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub task_id: String,
    pub query: TripletQuery,
    pub w: i8,
    /// The submission repeated an already stored answer.
    pub duplicate: bool,
    pub answered: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub task_id: String,
    pub total: usize,
    pub answered: usize,
    pub leased: usize,
    pub unassigned: usize,
    pub per_annotator: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub task_id: String,
    pub n: usize,
    pub pool_size: usize,
    pub answered: usize,
    pub per_annotator: BTreeMap<String, usize>,
}

pub struct Export {
    pub labels: LabeledTripletSet,
    pub summary: ExportSummary,
}

struct TaskState {
    created: TaskCreated,
    index: HashMap<TripletQuery, usize>,
    status: Vec<Status>,
    /// Most recent lease that lapsed (or was reassigned) per query, for the grace window.
    lapsed: HashMap<usize, Lease>,
    /// Released or reclaimed queries waiting to be dealt again.
    free: BTreeSet<usize>,
    leased: BTreeSet<usize>,
    holder: HashMap<String, usize>,
    next_fresh: usize,
    responses: Vec<ResponseRecord>,
}

impl TaskState {
    fn new(created: TaskCreated) -> Self {
        let index = created.pool.iter().enumerate().map(|(p, q)| (*q, p)).collect();
        let len = created.pool.len();
        Self {
            created,
            index,
            status: vec![Status::Unassigned; len],
            lapsed: HashMap::new(),
            free: BTreeSet::new(),
            leased: BTreeSet::new(),
            holder: HashMap::new(),
            next_fresh: 0,
            responses: Vec::new(),
        }
    }

    fn total(&self) -> usize {
        self.created.pool.len()
    }

    fn answered(&self) -> usize {
        self.responses.len()
    }

    /// Marks a replayed or freshly accepted response as the answer of its query.
    fn apply_response(&mut self, record: ResponseRecord) -> ServiceResult<()> {
        let pos = *self
            .index
            .get(&record.query)
            .ok_or(ServiceError::UnknownQuery(record.query))?;
        if let Status::Answered(_) = self.status[pos] {
            return Err(ServiceError::Gone(format!("query {} already answered", record.query)));
        }
        if let Status::Leased(lease) = &self.status[pos] {
            if self.holder.get(&lease.annotator) == Some(&pos) {
                self.holder.remove(&lease.annotator);
            }
        }
        if self.holder.get(&record.annotator_id) == Some(&pos) {
            self.holder.remove(&record.annotator_id);
        }
        self.leased.remove(&pos);
        self.free.remove(&pos);
        self.lapsed.remove(&pos);
        if pos >= self.next_fresh {
            // Only possible on replay of an older log ordering; keep the dealing cursor monotone.
            for p in self.next_fresh..pos {
                self.free.insert(p);
            }
            self.next_fresh = pos + 1;
        }
        self.status[pos] = Status::Answered(self.responses.len());
        self.responses.push(record);
        Ok(())
    }

    fn lease(&mut self, pos: usize, annotator: &str, now: u64) -> u64 {
        let expires = now + self.created.lease_timeout_ms;
        if let Status::Leased(old) = std::mem::replace(&mut self.status[pos], Status::Unassigned) {
            if self.holder.get(&old.annotator) == Some(&pos) {
                self.holder.remove(&old.annotator);
            }
            self.lapsed.insert(pos, old);
        }
        self.status[pos] = Status::Leased(Lease {
            annotator: annotator.to_owned(),
            expires,
        });
        self.free.remove(&pos);
        self.leased.insert(pos);
        self.holder.insert(annotator.to_owned(), pos);
        expires
    }

    fn first_expired(&self, now: u64) -> Option<usize> {
        self.leased.iter().copied().find(|&p| match &self.status[p] {
            Status::Leased(l) => l.expires <= now,
            _ => false,
        })
    }

    fn next(&mut self, annotator: &str, now: u64) -> Option<(usize, u64)> {
        if let Some(&pos) = self.holder.get(annotator) {
            if let Status::Leased(l) = &self.status[pos] {
                if l.annotator == annotator && l.expires > now {
                    return Some((pos, l.expires));
                }
            }
        }
        let candidate = [self.free.first().copied(), self.first_expired(now)]
            .into_iter()
            .flatten()
            .min()
            .or_else(|| (self.next_fresh < self.total()).then_some(self.next_fresh))?;
        if candidate == self.next_fresh {
            self.next_fresh += 1;
        }
        // An annotator holds at most one lease; a new one releases the old.
        if let Some(old) = self.holder.remove(annotator) {
            if let Status::Leased(l) = &self.status[old] {
                if l.annotator == annotator && old != candidate {
                    let l = l.clone();
                    self.status[old] = Status::Unassigned;
                    self.leased.remove(&old);
                    self.lapsed.insert(old, l);
                    self.free.insert(old);
                }
            }
        }
        let expires = self.lease(candidate, annotator, now);
        Some((candidate, expires))
    }

    fn outstanding(&self, now: u64) -> usize {
        self.leased
            .iter()
            .filter(|&&p| matches!(&self.status[p], Status::Leased(l) if l.expires > now))
            .count()
    }

    fn assignment(&self, pos: usize, expires: u64) -> Assignment {
        let q = self.created.pool[pos];
        let entry = |t: usize| self.created.manifest.entries[t - 1].clone();
        Assignment {
            task_id: self.created.task_id.clone(),
            position: pos,
            query: q,
            reference: entry(q.i),
            option_a: entry(q.j),
            option_b: entry(q.k),
            lease_expires_at: expires,
            answered: self.answered(),
            total: self.total(),
        }
    }

    fn per_annotator(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for r in &self.responses {
            *m.entry(r.annotator_id.clone()).or_insert(0) += 1;
        }
        m
    }
}

pub struct AnnotationService {
    config: ServiceConfig,
    clock: Arc<dyn Clock>,
    log: Mutex<EventLog>,
    tasks: RwLock<BTreeMap<String, Arc<Mutex<TaskState>>>>,
    assets: RwLock<HashMap<String, StimulusEntry>>,
}

impl AnnotationService {
    /// Opens the data directory and rebuilds every task by replaying the log.
    pub fn open(config: ServiceConfig, clock: Arc<dyn Clock>) -> ServiceResult<Self> {
        let (log, events) = EventLog::open(&config.data_dir, config.sync)?;
        let mut tasks: BTreeMap<String, TaskState> = BTreeMap::new();
        let mut assets = HashMap::new();
        for event in events {
            match event {
                Event::TaskCreated(created) => {
                    for e in &created.manifest.entries {
                        assets.insert(e.asset_id.clone(), e.clone());
                    }
                    tasks.insert(created.task_id.clone(), TaskState::new(created));
                }
                Event::Response(r) => {
                    let task = tasks
                        .get_mut(&r.task_id)
                        .ok_or_else(|| ServiceError::NotFound(r.task_id.clone()))?;
                    if let Err(e) = task.apply_response(r) {
                        ::log::warn!("ignoring inconsistent logged response: {e}");
                    }
                }
            }
        }
        Ok(Self {
            config,
            clock,
            log: Mutex::new(log),
            tasks: RwLock::new(
                tasks
                    .into_iter()
                    .map(|(k, v)| (k, Arc::new(Mutex::new(v))))
                    .collect(),
            ),
            assets: RwLock::new(assets),
        })
    }

    pub fn open_system(config: ServiceConfig) -> ServiceResult<Self> {
        Self::open(config, Arc::new(SystemClock))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn log_path(&self) -> PathBuf {
        self.log.lock().path().to_path_buf()
    }

    fn task(&self, task_id: &str) -> ServiceResult<Arc<Mutex<TaskState>>> {
        self.tasks
            .read()
            .get(task_id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(task_id.to_owned()))
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.read().keys().cloned().collect()
    }

    /// Samples the query pool and persists the task before returning its id.
    pub fn create_task(&self, req: CreateTask) -> ServiceResult<String> {
        req.manifest.validate()?;
        let n = req.manifest.len();
        let budget = match (req.budget, req.k) {
            (Some(b), None) => b,
            (None, Some(k)) => triplet_budget(n, k)?,
            (None, None) => triplet_budget(n, 15.0)?,
            (Some(_), Some(_)) => {
                return Err(ServiceError::Invalid("give either budget or k, not both".into()))
            }
        };
        if budget == 0 {
            return Err(ServiceError::Invalid("budget must be >= 1".into()));
        }
        let lease_timeout_ms = match req.lease_timeout_s {
            Some(s) if s > 0.0 && s.is_finite() => (s * 1000.0).round() as u64,
            Some(s) => return Err(ServiceError::Invalid(format!("lease timeout {s} must be positive"))),
            None => self.config.lease_timeout_ms,
        };
        let pool = sample_triplets(n, budget, req.seed)?;

        let mut tasks = self.tasks.write();
        let task_id = match req.task_id {
            Some(id) if tasks.contains_key(&id) => return Err(ServiceError::DuplicateTask(id)),
            Some(id) if id.is_empty() => return Err(ServiceError::Invalid("empty task id".into())),
            Some(id) => id,
            None => (tasks.len() + 1..)
                .map(|c| format!("task-{c}"))
                .find(|id| !tasks.contains_key(id))
                .expect("unbounded"),
        };
        let created = TaskCreated {
            task_id: task_id.clone(),
            manifest: req.manifest,
            pool,
            lease_timeout_ms,
            seed: req.seed,
            created_at: self.clock.now_ms(),
        };
        self.log.lock().append(&Event::TaskCreated(created.clone()))?;
        {
            let mut assets = self.assets.write();
            for e in &created.manifest.entries {
                assets.insert(e.asset_id.clone(), e.clone());
            }
        }
        tasks.insert(task_id.clone(), Arc::new(Mutex::new(TaskState::new(created))));
        Ok(task_id)
    }

    /// Leases the first unassigned or lapsed query to `annotator`. Repeated
    /// calls while the lease is live return the same query.
    pub fn next_query(&self, task_id: &str, annotator: &str) -> ServiceResult<NextQuery> {
        if annotator.is_empty() {
            return Err(ServiceError::Invalid("annotator id is required".into()));
        }
        let task = self.task(task_id)?;
        let mut t = task.lock();
        let now = self.clock.now_ms();
        Ok(match t.next(annotator, now) {
            Some((pos, expires)) => NextQuery::Query(t.assignment(pos, expires)),
            None => NextQuery::NoWork {
                outstanding: t.outstanding(now),
            },
        })
    }

    /// Returns a leased query to the pool without recording an answer.
    pub fn release(&self, task_id: &str, annotator: &str, query: TripletQuery) -> ServiceResult<()> {
        let task = self.task(task_id)?;
        let mut t = task.lock();
        let pos = *t.index.get(&query).ok_or(ServiceError::UnknownQuery(query))?;
        match &t.status[pos] {
            Status::Leased(l) if l.annotator == annotator => {
                t.status[pos] = Status::Unassigned;
                t.leased.remove(&pos);
                t.holder.remove(annotator);
                t.free.insert(pos);
                Ok(())
            }
            _ => Err(ServiceError::Conflict(format!("query {query} is not leased to {annotator}"))),
        }
    }

    pub fn submit_response(
        &self,
        task_id: &str,
        annotator: &str,
        query: TripletQuery,
        choice: Choice,
        latency_ms: u64,
    ) -> ServiceResult<Ack> {
        let task = self.task(task_id)?;
        let mut t = task.lock();
        let pos = *t.index.get(&query).ok_or(ServiceError::UnknownQuery(query))?;
        let now = self.clock.now_ms();
        let grace = self.config.grace_ms;
        let within = |l: &Lease| l.annotator == annotator && now <= l.expires + grace;
        match &t.status[pos] {
            Status::Answered(idx) => {
                let prev = &t.responses[*idx];
                if prev.annotator_id == annotator && prev.choice == choice {
                    return Ok(Ack {
                        task_id: task_id.to_owned(),
                        query,
                        w: choice.label().w(),
                        duplicate: true,
                        answered: t.answered(),
                        total: t.total(),
                    });
                }
                if prev.annotator_id == annotator {
                    return Err(ServiceError::Conflict(format!(
                        "query {query} was already answered {:?} by {annotator}",
                        prev.choice
                    )));
                }
                return Err(ServiceError::Gone(format!("query {query} was answered by another annotator")));
            }
            Status::Leased(l) if within(l) => {}
            _ if t.lapsed.get(&pos).is_some_and(within) => {}
            _ => {
                return Err(ServiceError::Conflict(format!(
                    "query {query} is not leased to {annotator}"
                )))
            }
        }
        let record = ResponseRecord {
            task_id: task_id.to_owned(),
            query,
            annotator_id: annotator.to_owned(),
            choice,
            submitted_at: now,
            latency_ms,
        };
        // Durable before acknowledged.
        self.log.lock().append(&Event::Response(record.clone()))?;
        t.apply_response(record)?;
        Ok(Ack {
            task_id: task_id.to_owned(),
            query,
            w: choice.label().w(),
            duplicate: false,
            answered: t.answered(),
            total: t.total(),
        })
    }

    pub fn progress(&self, task_id: &str) -> ServiceResult<Progress> {
        let task = self.task(task_id)?;
        let t = task.lock();
        let leased = t.outstanding(self.clock.now_ms());
        Ok(Progress {
            task_id: task_id.to_owned(),
            total: t.total(),
            answered: t.answered(),
            leased,
            unassigned: t.total() - t.answered() - leased,
            per_annotator: t.per_annotator(),
        })
    }

    /// Answered queries as human labels; disjointness is re-validated by fusing
    /// the per-annotator sets.
    pub fn export_labels(&self, task_id: &str) -> ServiceResult<Export> {
        let task = self.task(task_id)?;
        let t = task.lock();
        let n = t.created.manifest.len();
        let mut per: BTreeMap<String, LabeledTripletSet> = BTreeMap::new();
        for r in &t.responses {
            per.entry(r.annotator_id.clone())
                .or_insert_with(|| LabeledTripletSet::new(n))
                .push(LabeledTriplet {
                    query: r.query,
                    label: r.choice.label(),
                    annotator: r.annotator_id.clone(),
                    source: Source::Human,
                })?;
        }
        if !per.is_empty() {
            fuse(per.values())?;
        }
        let labels = LabeledTripletSet::from_labels(
            n,
            t.responses.iter().map(|r| LabeledTriplet {
                query: r.query,
                label: r.choice.label(),
                annotator: r.annotator_id.clone(),
                source: Source::Human,
            }),
        )?;
        Ok(Export {
            labels,
            summary: ExportSummary {
                task_id: task_id.to_owned(),
                n,
                pool_size: t.total(),
                answered: t.answered(),
                per_annotator: t.per_annotator(),
            },
        })
    }

    /// Writes `<task>.jsonl` and `<task>.summary.json` into `dir`.
    pub fn write_export(&self, task_id: &str, dir: &Path) -> ServiceResult<(PathBuf, PathBuf)> {
        let export = self.export_labels(task_id)?;
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        let labels_path = dir.join(format!("{task_id}.jsonl"));
        let summary_path = dir.join(format!("{task_id}.summary.json"));
        std::fs::write(&labels_path, crate::interchange::to_jsonl_string(&export.labels)).map_err(Error::from)?;
        std::fs::write(
            &summary_path,
            serde_json::to_string_pretty(&export.summary).map_err(Error::from)?,
        )
        .map_err(Error::from)?;
        Ok((labels_path, summary_path))
    }

    pub fn manifest(&self, task_id: &str) -> ServiceResult<StimulusManifest> {
        Ok(self.task(task_id)?.lock().created.manifest.clone())
    }

    pub fn asset(&self, asset_id: &str) -> Option<StimulusEntry> {
        self.assets.read().get(asset_id).cloned()
    }
}

/// Replays a log and checks that no query of any task was answered twice.
/// Returns the number of answered queries per task.
pub fn verify_log_disjointness(path: &Path) -> crate::error::Result<BTreeMap<String, usize>> {
    let mut seen: HashMap<(String, TripletQuery), String> = HashMap::new();
    let mut counts = BTreeMap::new();
    for event in read_events(path)? {
        if let Event::Response(r) = event {
            if let Some(first) = seen.insert((r.task_id.clone(), r.query), r.annotator_id.clone()) {
                return Err(Error::FusionConflict {
                    query: r.query,
                    first,
                    second: r.annotator_id,
                });
            }
            *counts.entry(r.task_id).or_insert(0) += 1;
        }
    }
    Ok(counts)
}
