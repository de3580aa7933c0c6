//! Session records on disk and the state machine that drives them.
//!
//! Each session lives in `<data_dir>/<id>.json`, rewritten atomically after
//! every transition. Heavy work (Stage 1, belief updates, query synthesis)
//! runs in [`SessionStore::compute`] without holding the session lock, so
//! reads stay cheap while a query is being generated. All randomness comes
//! from the session seed, so recomputing after a crash yields the same query.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use dempref::dynamics::{self, rollout};
use dempref::engine::{self, PendingQuery};
use dempref::{DemPrefConfig, PreferenceMode, Ranking, SessionState, Trajectory, UpdateRule};

use crate::api::{self, BeliefSummary, CreateSession, QueryState, SessionSummary, VERSION};
use crate::error::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingDemo,
    Computing,
    AwaitingResponse,
    Done,
}

/// A ranking as the client sent it (one-based positions).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmittedRanking {
    pub iteration: usize,
    pub ranking: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub v: u32,
    pub id: String,
    pub domain: String,
    pub status: Status,
    pub config: DemPrefConfig<f64>,
    pub demonstrations: Vec<Trajectory<f64>>,
    /// Absent until Stage 1 has run.
    pub state: Option<SessionState<f64>>,
    pub pending: Option<PendingQuery<f64>>,
    /// Accepted ranking not yet folded into the belief.
    pub queued: Option<SubmittedRanking>,
    pub rankings: Vec<SubmittedRanking>,
    /// Last computation failure; the session stays in `computing` and is retried on restart.
    pub error: Option<String>,
    pub created_ms: u64,
    pub updated_ms: u64,
}

impl SessionRecord {
    fn remaining_demonstrations(&self) -> usize {
        self.config.n_dem - self.demonstrations.len()
    }

    fn iteration(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.iteration)
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

type Shared = Arc<Mutex<SessionRecord>>;

pub struct SessionStore {
    dir: PathBuf,
    sessions: Mutex<HashMap<String, Shared>>,
    in_flight: Mutex<HashSet<String>>,
}

impl SessionStore {
    /// Opens `dir`, creating it if needed, and loads every session file in it.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let record: SessionRecord = serde_json::from_slice(&fs::read(&path)?)
                    .map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
                sessions.insert(record.id.clone(), Arc::new(Mutex::new(record)));
            }
        }
        log::info!("loaded {} sessions from {}", sessions.len(), dir.display());
        Ok(Self {
            dir,
            sessions: Mutex::new(sessions),
            in_flight: Mutex::new(HashSet::new()),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    /// Sessions left mid-computation, e.g. by a crash; callers should `compute` each.
    pub fn unfinished(&self) -> Vec<String> {
        let sessions = lock(&self.sessions);
        let mut ids: Vec<String> = sessions
            .iter()
            .filter(|(_, r)| lock(r).status == Status::Computing)
            .map(|(id, _)| id.clone())
            .collect();
        ids.sort();
        ids
    }

    fn get(&self, id: &str) -> Result<Shared, ServiceError> {
        lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    fn persist(&self, record: &SessionRecord) -> Result<(), ServiceError> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&serde_json::to_vec_pretty(record)?)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        tmp.persist(self.path(&record.id)).map_err(|e| ServiceError::from(e.error))?;
        Ok(())
    }

    /// Validates the request and stores a new session. Returns its id and whether it needs computing.
    pub fn create(&self, req: &CreateSession) -> Result<(String, Status), ServiceError> {
        api::check_version(req.v)?;
        dynamics::domain::<f64>(&req.domain)?;
        let config = DemPrefConfig {
            n_dem: req.n_dem,
            n_queries: req.n_queries,
            n_opt: req.n_opt,
            use_ic: req.use_ic,
            update_mode: UpdateRule::Rank,
            preference_mode: PreferenceMode::Exact,
            beta_demo: req.beta_demo,
            beta_response: req.beta_response,
            sampler: req.sampler.clone().unwrap_or_default(),
            budget: req.budget.clone().unwrap_or_default(),
            seed: req.seed,
        };
        config.validate()?;
        let id = uuid::Uuid::new_v4().to_string();
        let now = now_ms();
        let status = if config.n_dem == 0 { Status::Computing } else { Status::AwaitingDemo };
        let record = SessionRecord {
            v: VERSION,
            id: id.clone(),
            domain: req.domain.clone(),
            status,
            config,
            demonstrations: Vec::new(),
            state: None,
            pending: None,
            queued: None,
            rankings: Vec::new(),
            error: None,
            created_ms: now,
            updated_ms: now,
        };
        self.persist(&record)?;
        lock(&self.sessions).insert(id.clone(), Arc::new(Mutex::new(record)));
        log::info!("created session {id}");
        Ok((id, status))
    }

    /// Rolls out and stores a demonstration; the last one moves the session to `computing`.
    pub fn submit_demonstration(&self, id: &str, controls: &[Vec<f64>]) -> Result<api::DemonstrationAccepted, ServiceError> {
        let shared = self.get(id)?;
        let mut record = lock(&shared);
        if record.status != Status::AwaitingDemo {
            return Err(ServiceError::Conflict(format!(
                "session {id} is {:?}, not awaiting a demonstration",
                record.status
            )));
        }
        let system = dynamics::domain::<f64>(&record.domain)?;
        let trajectory = rollout(system.as_ref(), controls)?;
        let mut next = record.clone();
        next.demonstrations.push(trajectory.clone());
        if next.remaining_demonstrations() == 0 {
            next.status = Status::Computing;
        }
        next.updated_ms = now_ms();
        self.persist(&next)?;
        *record = next;
        Ok(api::DemonstrationAccepted {
            v: VERSION,
            id: id.to_string(),
            status: record.status,
            remaining: record.remaining_demonstrations(),
            trajectory,
        })
    }

    /// Accepts the ranking for the pending query exactly once.
    pub fn submit_ranking(&self, id: &str, req: &api::SubmitRanking) -> Result<api::RankingAccepted, ServiceError> {
        api::check_version(req.v)?;
        let shared = self.get(id)?;
        let mut record = lock(&shared);
        let iteration = record.iteration();
        if record.status != Status::AwaitingResponse {
            return Err(ServiceError::Conflict(format!(
                "session {id} is {:?}; no query is awaiting a ranking",
                record.status
            )));
        }
        if req.iteration != iteration {
            return Err(ServiceError::Conflict(format!(
                "ranking for iteration {} but the pending query is iteration {iteration}",
                req.iteration
            )));
        }
        let n_opt = record.pending.as_ref().map_or(0, |p| p.query.len());
        let ranking = Ranking::from_one_based(&req.ranking)?;
        if ranking.len() != n_opt {
            return Err(ServiceError::invalid(
                "ranking",
                format!("query has {n_opt} options, ranking has {}", ranking.len()),
            ));
        }
        let submitted = SubmittedRanking {
            iteration,
            ranking: req.ranking.clone(),
        };
        let mut next = record.clone();
        next.rankings.push(submitted.clone());
        next.queued = Some(submitted);
        next.status = Status::Computing;
        next.updated_ms = now_ms();
        self.persist(&next)?;
        *record = next;
        Ok(api::RankingAccepted {
            v: VERSION,
            id: id.to_string(),
            status: record.status,
            iteration: iteration + 1,
        })
    }

    /// Performs the pending computation of a `computing` session. No-op in any other status
    /// or when another thread is already computing it.
    pub fn compute(&self, id: &str) -> Result<(), ServiceError> {
        if !lock(&self.in_flight).insert(id.to_string()) {
            return Ok(());
        }
        let result = self.compute_inner(id);
        lock(&self.in_flight).remove(id);
        if let Err(e) = &result {
            log::error!("session {id}: {e}");
            if let Ok(shared) = self.get(id) {
                let mut record = lock(&shared);
                record.error = Some(e.to_string());
                record.updated_ms = now_ms();
                let _ = self.persist(&record);
            }
        }
        result
    }

    fn compute_inner(&self, id: &str) -> Result<(), ServiceError> {
        let shared = self.get(id)?;
        let snapshot = lock(&shared).clone();
        if snapshot.status != Status::Computing {
            return Ok(());
        }
        let system = dynamics::domain::<f64>(&snapshot.domain)?;
        let config = &snapshot.config;
        let mut state = match &snapshot.state {
            None => engine::initial_state(config, system.as_ref(), &snapshot.demonstrations, None)?,
            Some(s) => s.clone(),
        };
        if let (Some(queued), Some(pending)) = (&snapshot.queued, &snapshot.pending) {
            let ranking = Ranking::from_one_based(&queued.ranking)?;
            state = engine::apply_response(&state, config, pending, ranking, None)?;
        }
        let (status, pending) = if state.iteration >= config.n_queries {
            (Status::Done, None)
        } else {
            (Status::AwaitingResponse, Some(engine::prepare_query(&state, config, system.as_ref())?))
        };

        let mut record = lock(&shared);
        let mut next = record.clone();
        next.state = Some(state);
        next.pending = pending;
        next.queued = None;
        next.status = status;
        next.error = None;
        next.updated_ms = now_ms();
        self.persist(&next)?;
        *record = next;
        log::info!("session {id}: {status:?} at iteration {}", record.iteration());
        Ok(())
    }

    /// Runs `compute` until the session leaves `computing`.
    pub fn settle(&self, id: &str) -> Result<Status, ServiceError> {
        self.compute(id)?;
        Ok(self.record(id)?.status)
    }

    pub fn record(&self, id: &str) -> Result<SessionRecord, ServiceError> {
        let shared = self.get(id)?;
        let record = lock(&shared).clone();
        Ok(record)
    }

    pub fn query(&self, id: &str) -> Result<QueryState, ServiceError> {
        let record = self.record(id)?;
        let mut out = QueryState {
            v: VERSION,
            id: record.id.clone(),
            status: record.status,
            iteration: record.iteration(),
            query: None,
            remaining_demonstrations: None,
            belief: None,
        };
        match record.status {
            Status::AwaitingDemo => out.remaining_demonstrations = Some(record.remaining_demonstrations()),
            Status::AwaitingResponse => out.query = record.pending.as_ref().map(|p| p.query.clone()),
            Status::Done => out.belief = Some(belief_summary(&record)?),
            Status::Computing => {}
        }
        Ok(out)
    }

    pub fn belief(&self, id: &str) -> Result<BeliefSummary, ServiceError> {
        belief_summary(&self.record(id)?)
    }

    pub fn summary(&self, id: &str) -> Result<SessionSummary, ServiceError> {
        let r = self.record(id)?;
        Ok(SessionSummary {
            v: VERSION,
            id: r.id.clone(),
            status: r.status,
            domain: r.domain.clone(),
            iteration: r.iteration(),
            n_dem: r.config.n_dem,
            n_queries: r.config.n_queries,
            n_opt: r.config.n_opt,
            use_ic: r.config.use_ic,
            demonstrations: r.demonstrations.len(),
            rankings: r.rankings.clone(),
            error: r.error.clone(),
            created_ms: r.created_ms,
            updated_ms: r.updated_ms,
        })
    }

    /// The seed-determined part of a session (learning state and pending query) as JSON.
    ///
    /// Identical seeds, demonstrations and rankings give byte-identical output,
    /// unlike the session file, which also records ids and timestamps.
    pub fn trace_json(&self, id: &str) -> Result<String, ServiceError> {
        #[derive(Serialize)]
        struct Trace<'a> {
            v: u32,
            state: &'a Option<SessionState<f64>>,
            pending: &'a Option<PendingQuery<f64>>,
        }
        let r = self.record(id)?;
        let trace = Trace {
            v: VERSION,
            state: &r.state,
            pending: &r.pending,
        };
        Ok(serde_json::to_string_pretty(&trace)? + "\n")
    }
}

fn belief_summary(record: &SessionRecord) -> Result<BeliefSummary, ServiceError> {
    let state = record
        .state
        .as_ref()
        .ok_or_else(|| ServiceError::Conflict(format!("session {} has no belief before its demonstrations", record.id)))?;
    let belief = &state.belief;
    Ok(BeliefSummary {
        v: VERSION,
        id: record.id.clone(),
        status: record.status,
        iteration: state.iteration,
        samples: belief.len(),
        mean: belief.mean().0,
        mean_direction: belief.mean_direction().0,
        belief_digest: belief.digest(),
        evidence_digest: belief.evidence_digest.clone(),
    })
}
