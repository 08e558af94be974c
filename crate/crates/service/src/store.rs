//! In-memory sessions backed by on-disk event logs.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use imo3::algorithms::{evaluate_run, Algorithm, Elicitor, RunConfig, RunResult};
use imo3::types::{utility, Scalarization, ValueVector};

use crate::api::{
    AnswerRequest, AnsweredView, ApiError, CreateSessionRequest, DisplayValue, ProblemInfo, QueryView,
    ResultView, SessionState, SessionView,
};
use crate::catalog::{Catalog, ProblemEntry};
use crate::events::{parse_event_log, EventWriter, SessionEvent};

pub const DEFAULT_EXPIRY: Duration = Duration::from_secs(24 * 60 * 60);

/// Wall-clock source, in milliseconds since the Unix epoch.
pub trait Clock: Send + Sync + fmt::Debug {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, by: Duration) {
        self.0.fetch_add(by.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

struct Session {
    id: String,
    entry: Arc<ProblemEntry>,
    elicitor: Elicitor,
    theta_star: Option<Scalarization>,
    result: Option<RunResult>,
    created_at_ms: u64,
    updated_at_ms: u64,
    writer: Option<EventWriter>,
}

impl Session {
    fn start(
        id: String,
        entry: Arc<ProblemEntry>,
        algorithm: Algorithm,
        config: RunConfig,
        theta_star: Option<Vec<f64>>,
        now_ms: u64,
    ) -> Result<Session, ApiError> {
        let d = entry.problem.num_objectives;
        let theta_star = match theta_star {
            Some(t) if t.len() != d => {
                return Err(ApiError::invalid(
                    "theta_star",
                    format!("expected {d} components, got {}", t.len()),
                ))
            }
            t => t.map(Scalarization::new),
        };
        let estimator = entry
            .estimator(&config)
            .map_err(|e| ApiError::invalid("estimator", e.to_string()))?;
        let mut elicitor =
            Elicitor::new(algorithm, estimator, config).map_err(|e| ApiError::invalid("config", e.to_string()))?;
        elicitor
            .next_query()
            .map_err(|e| ApiError::internal(format!("could not propose a query: {e}")))?;
        Ok(Session {
            id,
            entry,
            elicitor,
            theta_star,
            result: None,
            created_at_ms: now_ms,
            updated_at_ms: now_ms,
            writer: None,
        })
    }

    fn apply(&mut self, answer: bool) -> Result<(), ApiError> {
        let internal = |e: imo3::Error| ApiError::internal(e.to_string());
        self.elicitor.submit(answer).map_err(internal)?;
        if !self.elicitor.is_done() {
            self.elicitor.next_query().map_err(internal)?;
            return Ok(());
        }
        let mut result = self.elicitor.clone().finish().map_err(internal)?;
        if let Some(theta) = &self.theta_star {
            if self.entry.problem.has_ground_truth() {
                evaluate_run(&mut result, &self.entry.problem, self.elicitor.estimator(), theta).map_err(internal)?;
            }
        }
        self.result = Some(result);
        Ok(())
    }

    fn display(&self, v: &ValueVector) -> Vec<DisplayValue> {
        let difference = self.elicitor.config().subtract_baseline;
        v.0.iter()
            .zip(&self.entry.problem.scales)
            .map(|(x, s)| DisplayValue {
                name: s.name.clone(),
                unit: s.unit.clone(),
                // a baseline difference has no offset
                value: if difference { s.scale * x } else { s.denormalize(*x) },
            })
            .collect()
    }

    fn view(&self, expiry_ms: u64) -> SessionView {
        let cfg = self.elicitor.config();
        let query = if self.result.is_none() {
            self.elicitor.pending().map(|q| QueryView {
                round: q.round,
                budget_t: cfg.budget_t,
                display: self.display(&q.value_vector),
                value_vector: q.value_vector.0,
                extensions: Default::default(),
            })
        } else {
            None
        };
        let history = self
            .elicitor
            .queries()
            .iter()
            .map(|q| AnsweredView {
                round: q.round,
                value_vector: q.value_vector.0.clone(),
                display: self.display(&q.value_vector),
                answer: q.answer,
            })
            .collect();
        let result = self.result.as_ref().map(|r| ResultView {
            theta_hat: r.theta_hat.0.clone(),
            final_value: r.final_value.0.clone(),
            final_display: self
                .entry
                .problem
                .scales
                .iter()
                .zip(&r.final_value.0)
                .map(|(s, x)| DisplayValue {
                    name: s.name.clone(),
                    unit: s.unit.clone(),
                    value: s.denormalize(*x),
                })
                .collect(),
            final_policy: r.final_policy.to_rows(),
            utility_theta_hat: utility(&r.theta_hat, &r.final_value).unwrap_or(f64::NAN),
            simple_regret: r.simple_regret,
            num_candidates: r.candidate_set.len(),
            diagnostics: r.diagnostics.clone(),
        });
        SessionView {
            session_id: self.id.clone(),
            problem_id: self.entry.id().to_string(),
            algorithm: self.elicitor.algorithm(),
            estimator: cfg.estimator_kind,
            state: if self.result.is_some() {
                SessionState::Completed
            } else {
                SessionState::AwaitingAnswer
            },
            budget_t: cfg.budget_t,
            answered: self.elicitor.answered(),
            query,
            history,
            result,
            created_at_ms: self.created_at_ms,
            updated_at_ms: self.updated_at_ms,
            expires_at_ms: self
                .result
                .is_none()
                .then(|| self.updated_at_ms.saturating_add(expiry_ms)),
        }
    }
}

struct Slot {
    session: Mutex<Session>,
    view: RwLock<Arc<SessionView>>,
}

impl Slot {
    fn publish(&self, view: SessionView) {
        *self.view.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(view);
    }

    fn snapshot(&self) -> Arc<SessionView> {
        Arc::clone(&self.view.read().unwrap_or_else(|e| e.into_inner()))
    }
}

/// All sessions. Operations on one session are serialized by its mutex;
/// reads clone a published snapshot and never take that mutex.
pub struct SessionStore {
    catalog: Catalog,
    data_dir: Option<PathBuf>,
    clock: Arc<dyn Clock>,
    expiry_ms: u64,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
}

impl fmt::Debug for SessionStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionStore")
            .field("problems", &self.catalog.len())
            .field("data_dir", &self.data_dir)
            .field("expiry_ms", &self.expiry_ms)
            .field("sessions", &self.len())
            .finish()
    }
}

fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

impl SessionStore {
    /// In-memory store; nothing survives a restart.
    pub fn in_memory(catalog: Catalog, clock: Arc<dyn Clock>, expiry: Duration) -> Self {
        SessionStore {
            catalog,
            data_dir: None,
            clock,
            expiry_ms: expiry.as_millis() as u64,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Store persisted under `data_dir`, resuming every session logged there.
    /// Logs that cannot be replayed are skipped with a warning.
    pub fn open(catalog: Catalog, data_dir: &Path, clock: Arc<dyn Clock>, expiry: Duration) -> std::io::Result<Self> {
        std::fs::create_dir_all(data_dir)?;
        let mut store = SessionStore::in_memory(catalog, clock, expiry);
        store.data_dir = Some(data_dir.to_path_buf());
        let mut paths: Vec<PathBuf> = std::fs::read_dir(data_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            match store.replay(&path) {
                Ok(id) => log::info!("resumed session {id} from {}", path.display()),
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(store)
    }

    fn replay(&self, path: &Path) -> Result<String, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let log = parse_event_log(&text).map_err(|e| e.to_string())?;
        if path.file_stem().and_then(|s| s.to_str()) != Some(log.session_id.as_str()) {
            return Err(format!("file name does not match session id {}", log.session_id));
        }
        let entry = self
            .catalog
            .get(&log.problem_id)
            .ok_or_else(|| format!("unknown problem `{}`", log.problem_id))?;
        let mut s = Session::start(
            log.session_id.clone(),
            entry,
            log.algorithm,
            log.config,
            log.theta_star,
            log.created_at_ms,
        )
        .map_err(|e| e.message)?;
        for a in &log.answers {
            s.apply(*a).map_err(|e| e.message)?;
        }
        s.updated_at_ms = log.updated_at_ms;
        s.writer = Some(EventWriter::reopen(path, log.truncated_tail).map_err(|e| e.to_string())?);
        let id = s.id.clone();
        self.insert(s);
        Ok(id)
    }

    fn insert(&self, s: Session) -> Arc<SessionView> {
        let view = Arc::new(s.view(self.expiry_ms));
        let slot = Arc::new(Slot {
            session: Mutex::new(s),
            view: RwLock::new(Arc::clone(&view)),
        });
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(view.session_id.clone(), slot);
        view
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn problems(&self) -> Vec<ProblemInfo> {
        self.catalog.infos()
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    fn fresh_id(&self) -> String {
        loop {
            let id = format!("{:032x}", rand::random::<u128>());
            let taken = self
                .sessions
                .read()
                .unwrap_or_else(|e| e.into_inner())
                .contains_key(&id)
                || self.data_dir.as_ref().is_some_and(|d| log_path(d, &id).exists());
            if !taken {
                return id;
            }
        }
    }

    /// Starts a session and proposes its first query.
    pub fn create(&self, req: CreateSessionRequest) -> Result<SessionView, ApiError> {
        let entry = self
            .catalog
            .get(&req.problem_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown problem `{}`", req.problem_id)))?;
        let now = self.clock.now_ms();
        let id = self.fresh_id();
        let mut s = Session::start(
            id.clone(),
            entry,
            req.algorithm,
            req.config.clone(),
            req.theta_star.clone(),
            now,
        )?;
        if let Some(dir) = &self.data_dir {
            let created = SessionEvent::Created {
                session_id: id.clone(),
                problem_id: req.problem_id,
                algorithm: req.algorithm,
                config: req.config,
                theta_star: req.theta_star,
                at_ms: now,
            };
            let w = EventWriter::create(&log_path(dir, &id), &created)
                .map_err(|e| ApiError::internal(format!("could not persist session: {e}")))?;
            s.writer = Some(w);
        }
        Ok((*self.insert(s)).clone())
    }

    /// Current snapshot; an unanswered session past its expiry reads as expired.
    pub fn get(&self, id: &str) -> Result<SessionView, ApiError> {
        let view = self.slot(id)?.snapshot();
        let mut view = (*view).clone();
        if view.state == SessionState::AwaitingAnswer
            && view.expires_at_ms.is_some_and(|t| self.clock.now_ms() >= t)
        {
            view.state = SessionState::Expired;
        }
        Ok(view)
    }

    /// Records the answer for `req.round`. Rounds already answered return
    /// the current snapshot without recording anything.
    pub fn answer(&self, id: &str, req: AnswerRequest) -> Result<SessionView, ApiError> {
        let slot = self.slot(id)?;
        let mut s = slot.session.lock().unwrap_or_else(|e| e.into_inner());
        let answered = s.elicitor.answered();
        let budget = s.elicitor.config().budget_t;
        if req.round <= answered {
            return Ok((*slot.snapshot()).clone());
        }
        if s.result.is_some() || req.round > answered + 1 {
            return Err(ApiError::conflict(format!(
                "round {} is not open; {answered} of {budget} rounds answered",
                req.round
            )));
        }
        let now = self.clock.now_ms();
        if now >= s.updated_at_ms.saturating_add(self.expiry_ms) {
            return Err(ApiError::expired(format!("session `{id}` expired")));
        }
        if let Some(w) = &s.writer {
            w.append(&SessionEvent::Answered {
                round: req.round,
                answer: req.answer,
                at_ms: now,
            })
            .map_err(|e| ApiError::internal(format!("could not persist answer: {e}")))?;
        }
        s.apply(req.answer)?;
        s.updated_at_ms = now;
        let view = s.view(self.expiry_ms);
        slot.publish(view.clone());
        Ok(view)
    }
}
