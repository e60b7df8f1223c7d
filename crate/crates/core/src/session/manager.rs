//! Session lifecycle: plan, compile, navigate, count down.
//!
//! Each session has two locks. The operation lock is held for the whole
//! of `advance`, `back` and `refresh`, so mutations of one session run one
//! at a time; it is async and may be held across provider calls. The state
//! lock is a plain mutex guarding the session fields, taken only for short
//! reads and commits, so `state()` and timer ticks never wait on a compile.

use std::collections::{BTreeMap, HashMap};
use std::hash::{BuildHasher, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;
use tokio::sync::broadcast;

use super::journal::{Journal, JournalError, RecoveredSession};
use super::protocol::TimerStatus;
use super::timer::{Countdown, Tick};
use crate::compiler::{CompileError, CompiledStep, Compiler, SceneGraph};
use crate::plan::{StepPayload, TaskPlan};
use crate::scene::SceneSnapshot;
use crate::vision::{Frame, GatewayError};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("no session {0:?}")]
    UnknownSession(String),
    #[error("already at the last step")]
    EndOfPlan,
    #[error("already at the first step")]
    AtFirstStep,
    #[error("planning failed: {0}")]
    Plan(GatewayError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("journal: {0}")]
    Journal(#[from] JournalError),
}

impl SessionError {
    /// Stable code carried in protocol error messages.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::EmptyQuery => "empty_query",
            SessionError::UnknownSession(_) => "unknown_session",
            SessionError::EndOfPlan => "end_of_plan",
            SessionError::AtFirstStep => "at_first_step",
            SessionError::Plan(GatewayError::Timeout { .. }) | SessionError::Compile(CompileError { kind: crate::compiler::CompileErrorKind::Gateway(GatewayError::Timeout { .. }), .. }) => "provider_timeout",
            SessionError::Plan(GatewayError::Schema(_) | GatewayError::MalformedPlan(_)) => "plan_invalid",
            SessionError::Plan(_) => "plan_failed",
            SessionError::Compile(_) => "compile_failed",
            SessionError::Journal(_) => "journal",
        }
    }
}

/// Produces session ids.
pub trait IdGenerator: Send + Sync {
    fn next_id(&self) -> String;
}

/// Unpredictable ids from the std hasher's per-process random keys.
#[derive(Debug, Default)]
pub struct RandomIds {
    counter: AtomicU64,
    state: std::collections::hash_map::RandomState,
}

impl IdGenerator for RandomIds {
    fn next_id(&self) -> String {
        let mut h = self.state.build_hasher();
        h.write_u64(self.counter.fetch_add(1, Ordering::Relaxed));
        let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
        h.write_u128(nanos);
        format!("s-{:016x}", h.finish())
    }
}

/// `s-0001`, `s-0002`, ... for tests and reproducible runs.
#[derive(Debug, Default)]
pub struct SequentialIds {
    counter: AtomicU64,
}

impl IdGenerator for SequentialIds {
    fn next_id(&self) -> String {
        format!("s-{:04}", self.counter.fetch_add(1, Ordering::Relaxed) + 1)
    }
}

/// Session-scoped notifications outside the request/response flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEvent {
    TimerTick(Tick),
}

/// Guidance for the step a navigation landed on.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGuidance {
    pub step_index: usize,
    pub step_count: usize,
    pub compiled: CompiledStep,
    pub cached: bool,
}

#[derive(Debug)]
pub struct Created {
    pub session_id: String,
    pub plan: TaskPlan,
    /// Step 0. On failure the session still exists and `refresh` retries.
    pub guidance: Result<StepGuidance, SessionError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionView {
    pub current_step: usize,
    pub step_count: usize,
    pub compiled_steps: Vec<usize>,
    pub timer: Option<TimerStatus>,
}

struct SessionState {
    plan: TaskPlan,
    current: usize,
    initial: SceneSnapshot,
    snapshots: BTreeMap<usize, SceneSnapshot>,
    compiled: BTreeMap<usize, CompiledStep>,
    timer: Option<Countdown>,
}

struct Session {
    id: String,
    ops: tokio::sync::Mutex<()>,
    state: Mutex<SessionState>,
    events: broadcast::Sender<SessionEvent>,
}

struct Inner {
    compiler: Compiler,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    ids: Box<dyn IdGenerator>,
    journal: Option<Journal>,
}

/// Owns every live session. Cheap to clone.
#[derive(Clone)]
pub struct SessionManager {
    inner: Arc<Inner>,
}

#[derive(Serialize)]
struct Digest<'a> {
    current_step: usize,
    plan: &'a TaskPlan,
    scenes: BTreeMap<usize, &'a SceneGraph>,
}

impl SessionManager {
    pub fn new(compiler: Compiler) -> Self {
        Self::with_options(compiler, Box::new(RandomIds::default()), None)
    }

    pub fn with_options(compiler: Compiler, ids: Box<dyn IdGenerator>, journal: Option<Journal>) -> Self {
        SessionManager { inner: Arc::new(Inner { compiler, sessions: Mutex::new(HashMap::new()), ids, journal }) }
    }

    pub fn compiler(&self) -> &Compiler {
        &self.inner.compiler
    }

    /// Reloads every journaled session. Sessions resume at their recorded
    /// step with their cached guidance; timers are not restarted.
    pub fn recover(&self) -> Result<Vec<String>, SessionError> {
        let Some(journal) = &self.inner.journal else { return Ok(Vec::new()) };
        let mut ids = Vec::new();
        for id in journal.session_ids()? {
            let r: RecoveredSession = journal.recover(&id)?;
            let state = SessionState {
                plan: r.plan,
                current: r.current_step,
                initial: r.initial,
                snapshots: r.snapshots,
                compiled: r.compiled,
                timer: None,
            };
            self.insert(id.clone(), state);
            ids.push(id);
        }
        Ok(ids)
    }

    fn insert(&self, id: String, state: SessionState) -> Arc<Session> {
        let (events, _) = broadcast::channel(64);
        let session = Arc::new(Session { id: id.clone(), ops: Default::default(), state: Mutex::new(state), events });
        self.inner.sessions.lock().unwrap().insert(id, session.clone());
        session
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        self.inner.sessions.lock().unwrap().get(id).cloned().ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.inner.sessions.lock().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Plans the task and compiles step 0 against `initial`.
    pub async fn create_session(&self, query: &str, initial: SceneSnapshot) -> Result<Created, SessionError> {
        if query.trim().is_empty() {
            return Err(SessionError::EmptyQuery);
        }
        let response = self.inner.compiler.gateway().request_task_plan(query, &Frame::from(&initial)).await.map_err(SessionError::Plan)?;
        let plan = response.plan;
        let id = self.inner.ids.next_id();
        if let Some(j) = &self.inner.journal {
            j.record_created(&id, &plan, &initial)?;
        }
        let state = SessionState {
            plan: plan.clone(),
            current: 0,
            initial: initial.clone(),
            snapshots: BTreeMap::new(),
            compiled: BTreeMap::new(),
            timer: None,
        };
        let session = self.insert(id.clone(), state);
        let guidance = {
            let _op = session.ops.lock().await;
            self.compile_and_commit(&session, 0, initial).await
        };
        Ok(Created { session_id: id, plan, guidance })
    }

    /// Moves to the next step. With a snapshot the step is compiled against
    /// it; without one, cached guidance is served if present, else the step
    /// is compiled against the current step's snapshot. A failed compile
    /// leaves the session where it was.
    pub async fn advance(&self, id: &str, snapshot: Option<SceneSnapshot>) -> Result<StepGuidance, SessionError> {
        let session = self.session(id)?;
        let _op = session.ops.lock().await;
        let (next, fallback) = {
            let st = session.state.lock().unwrap();
            let next = st.current + 1;
            if next >= st.plan.len() {
                return Err(SessionError::EndOfPlan);
            }
            if snapshot.is_none() && st.compiled.contains_key(&next) {
                (next, None)
            } else {
                let fallback = st.snapshots.get(&st.current).cloned().unwrap_or_else(|| st.initial.clone());
                (next, Some(fallback))
            }
        };
        match (snapshot, fallback) {
            (Some(snap), _) | (None, Some(snap)) => self.compile_and_commit(&session, next, snap).await,
            (None, None) => self.serve_cached(&session, next),
        }
    }

    /// Moves to the previous step and re-serves its cached guidance.
    pub async fn back(&self, id: &str) -> Result<StepGuidance, SessionError> {
        let session = self.session(id)?;
        let _op = session.ops.lock().await;
        let prev = {
            let st = session.state.lock().unwrap();
            if st.current == 0 {
                return Err(SessionError::AtFirstStep);
            }
            st.current - 1
        };
        let cached = session.state.lock().unwrap().compiled.contains_key(&prev);
        if cached {
            self.serve_cached(&session, prev)
        } else {
            let snap = {
                let st = session.state.lock().unwrap();
                st.snapshots.get(&st.current).cloned().unwrap_or_else(|| st.initial.clone())
            };
            self.compile_and_commit(&session, prev, snap).await
        }
    }

    /// Recompiles the current step, against `snapshot` if given.
    pub async fn refresh(&self, id: &str, snapshot: Option<SceneSnapshot>) -> Result<StepGuidance, SessionError> {
        let session = self.session(id)?;
        let _op = session.ops.lock().await;
        let (current, snap) = {
            let st = session.state.lock().unwrap();
            let snap = snapshot.unwrap_or_else(|| st.snapshots.get(&st.current).cloned().unwrap_or_else(|| st.initial.clone()));
            (st.current, snap)
        };
        self.compile_and_commit(&session, current, snap).await
    }

    async fn compile_and_commit(&self, session: &Session, index: usize, snap: SceneSnapshot) -> Result<StepGuidance, SessionError> {
        let (step, initial, step_count) = {
            let st = session.state.lock().unwrap();
            (st.plan.steps[index].clone(), st.initial.clone(), st.plan.len())
        };
        let compiled = self.inner.compiler.compile_step(&initial, index, &step, &snap).await?;
        if let Some(j) = &self.inner.journal {
            j.record_compiled(&session.id, index, &snap, &compiled)?;
            j.record_moved(&session.id, index)?;
        }
        let mut st = session.state.lock().unwrap();
        st.snapshots.insert(index, snap);
        st.compiled.insert(index, compiled.clone());
        Self::move_to(&mut st, index);
        Ok(StepGuidance { step_index: index, step_count, compiled, cached: false })
    }

    fn serve_cached(&self, session: &Session, index: usize) -> Result<StepGuidance, SessionError> {
        if let Some(j) = &self.inner.journal {
            j.record_moved(&session.id, index)?;
        }
        let mut st = session.state.lock().unwrap();
        Self::move_to(&mut st, index);
        let compiled = st.compiled[&index].clone();
        Ok(StepGuidance { step_index: index, step_count: st.plan.len(), compiled, cached: true })
    }

    fn move_to(st: &mut SessionState, index: usize) {
        if st.current != index || st.timer.as_ref().is_some_and(|t| t.step_index != index) {
            st.timer = None;
        }
        st.current = index;
    }

    /// Starts the countdown for `step_index` if it is the current step,
    /// is a widget step and has no countdown running. Call after the
    /// step's guidance has been delivered so ticks follow it.
    pub fn arm_timer(&self, id: &str, step_index: usize) -> Result<bool, SessionError> {
        let session = self.session(id)?;
        let mut st = session.state.lock().unwrap();
        if st.current != step_index || st.timer.as_ref().is_some_and(|t| !t.is_finished()) {
            return Ok(false);
        }
        let StepPayload::Widget { seconds } = st.plan.steps[step_index].payload else {
            return Ok(false);
        };
        let weak = Arc::downgrade(&session);
        st.timer = Some(Countdown::start(step_index, seconds, move |tick| {
            let Some(session) = weak.upgrade() else { return false };
            let st = session.state.lock().unwrap();
            if st.current != tick.step_index {
                return false;
            }
            let _ = session.events.send(SessionEvent::TimerTick(tick));
            true
        }));
        Ok(true)
    }

    pub fn subscribe(&self, id: &str) -> Result<broadcast::Receiver<SessionEvent>, SessionError> {
        Ok(self.session(id)?.events.subscribe())
    }

    pub fn state(&self, id: &str) -> Result<SessionView, SessionError> {
        let session = self.session(id)?;
        let st = session.state.lock().unwrap();
        Ok(SessionView {
            current_step: st.current,
            step_count: st.plan.len(),
            compiled_steps: st.compiled.keys().copied().collect(),
            timer: st
                .timer
                .as_ref()
                .filter(|t| !t.is_finished())
                .map(|t| TimerStatus { step_index: t.step_index, seconds: t.seconds }),
        })
    }

    pub fn plan(&self, id: &str) -> Result<TaskPlan, SessionError> {
        Ok(self.session(id)?.state.lock().unwrap().plan.clone())
    }

    /// Cached guidance for a step, if compiled.
    pub fn guidance(&self, id: &str, step: usize) -> Result<Option<CompiledStep>, SessionError> {
        Ok(self.session(id)?.state.lock().unwrap().compiled.get(&step).cloned())
    }

    /// Canonical JSON of the observable state (current step, plan and the
    /// scene graphs, without timings), for comparing two runs.
    pub fn digest(&self, id: &str) -> Result<String, SessionError> {
        let session = self.session(id)?;
        let st = session.state.lock().unwrap();
        let d = Digest {
            current_step: st.current,
            plan: &st.plan,
            scenes: st.compiled.iter().map(|(k, v)| (*k, &v.scene)).collect(),
        };
        Ok(serde_json::to_string(&d).expect("digest serializes"))
    }
}
