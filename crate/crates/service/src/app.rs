//! Shared server state, per-session command serialization and the handlers.
//!
//! Each session has one writer (an async mutex around the engine) and a
//! published snapshot that readers consult without waiting on the writer.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rulemine::engine::{CurvePoint, Seed, Session, SessionConfig, SessionStatus};
use rulemine::hierarchy::{Hierarchy, HierarchyDump};
use rulemine::index::SketchIndex;
use rulemine::oracle::{Oracle, OracleQuery, SimulatedOracle};
use rulemine::traversal::Strategy;
use rulemine::{Corpus, CorpusFormat, Error, Grammar, GrammarId};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::registry::{index_file_name, CorpusInfo, Registry};
use crate::store::{replay, Event, EventLog, Note, OracleMode, EVENT_VERSION};

pub const API_VERSION: u32 = 1;

// ---------------------------------------------------------------- errors

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    Unprocessable(String),
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::UnexpectedFeedback(_) | Error::NoPendingQuery | Error::AlreadyIndexed(_) => ApiError::Conflict(msg),
            Error::Io { .. } | Error::Json(_) | Error::Csv(_) | Error::ReplayDiverged { .. } | Error::Version { .. } => {
                ApiError::Internal(msg)
            }
            _ => ApiError::Unprocessable(msg),
        }
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, message) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "not_found", m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, "conflict", m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid", m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", m),
        };
        if status.is_server_error() {
            tracing::error!(%message, "request failed");
        }
        (status, Json(json!({ "v": API_VERSION, "error": kind, "message": message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

// ---------------------------------------------------------------- wire types

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// The engine is applying an answer or picking the next query.
    Advancing,
    AwaitingAnswer,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptedRule {
    pub pattern: String,
    pub canonical: String,
    pub coverage_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub v: u32,
    pub session_id: String,
    pub corpus: String,
    pub oracle: OracleMode,
    pub strategy: Strategy,
    pub status: Phase,
    pub queries_used: usize,
    pub budget: usize,
    pub positives: usize,
    pub rules: usize,
    pub recall: Option<f64>,
    pub curve: Vec<CurvePoint>,
    pub accepted_rules: Vec<AcceptedRule>,
    pub pending_query_id: Option<u64>,
    pub created_at: u64,
    pub notes: Vec<Note>,
    pub error: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct CreateCorpus {
    pub name: String,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
    pub content: String,
    #[serde(default)]
    pub replace: bool,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::Jsonl
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub corpus: String,
    #[serde(default = "default_grammar")]
    pub grammar: GrammarId,
    pub max_depth: Option<usize>,
    pub max_gaps: Option<usize>,
    pub strategy: Option<Strategy>,
    pub tau: Option<u32>,
    pub budget: Option<usize>,
    pub seed: Seed,
    pub oracle: OracleMode,
    /// Full engine configuration; the fields above override it.
    pub config: Option<SessionConfig>,
}

fn default_grammar() -> GrammarId {
    GrammarId::TokensRegex
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Word {
    Yes,
    No,
}

/// `true`/`false` or `"yes"`/`"no"`.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(untagged)]
pub enum AnswerValue {
    Bool(bool),
    #[allow(private_interfaces)]
    Word(Word),
}

impl AnswerValue {
    fn yes(self) -> bool {
        matches!(self, AnswerValue::Bool(true) | AnswerValue::Word(Word::Yes))
    }
}

#[derive(Debug, Deserialize)]
pub struct AnswerBody {
    pub query_id: u64,
    pub answer: AnswerValue,
}

#[derive(Debug, Deserialize)]
pub struct NoteBody {
    pub text: String,
}

#[derive(Debug, Deserialize)]
pub struct CoverageParams {
    pub rule: Option<String>,
    pub limit: Option<usize>,
}

// ---------------------------------------------------------------- sessions

struct Journal {
    log: EventLog,
    last_issued: Option<u64>,
}

struct View {
    state: SessionState,
    pending: Option<OracleQuery>,
    hierarchy: Arc<HierarchyDump>,
}

struct SessionCell {
    dir: PathBuf,
    oracle: OracleMode,
    corpus: Arc<Corpus>,
    index: Arc<SketchIndex>,
    engine: Arc<tokio::sync::Mutex<Session>>,
    journal: Mutex<Journal>,
    view: RwLock<View>,
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl SessionCell {
    fn record(&self, event: &Event) -> rulemine::Result<()> {
        self.journal.lock().expect("journal lock").log.append(event)
    }

    /// Picks (or re-reads) the pending query, logging it once.
    fn issue(&self, s: &mut Session) -> rulemine::Result<Option<OracleQuery>> {
        let q = s.next_query()?;
        if let Some(q) = &q {
            let mut j = self.journal.lock().expect("journal lock");
            if j.last_issued != Some(q.query_id) {
                j.log.append(&Event::QueryIssued {
                    query_id: q.query_id,
                    canonical: q.heuristic.canonical(),
                })?;
                j.last_issued = Some(q.query_id);
            }
        }
        Ok(q)
    }

    fn apply(&self, s: &mut Session, query_id: u64, yes: bool) -> rulemine::Result<()> {
        s.answer(query_id, yes)?;
        if yes {
            let rec = s.queries().last().expect("answer recorded");
            self.record(&Event::Accepted {
                query_id,
                canonical: rec.heuristic.canonical(),
                coverage_size: rec.coverage_size,
            })?;
        }
        Ok(())
    }

    fn run_simulated(&self, s: &mut Session) -> rulemine::Result<()> {
        let mut oracle = SimulatedOracle::default();
        while let Some(q) = self.issue(s)? {
            let coverage = self.index.as_dyn().coverage(&q.heuristic)?;
            let yes = oracle.answer(&q, &coverage, &self.corpus)?;
            self.record(&Event::Answered {
                query_id: q.query_id,
                canonical: q.heuristic.canonical(),
                answer: yes,
            })?;
            self.apply(s, q.query_id, yes)?;
        }
        Ok(())
    }

    /// Runs a simulated session to the end, or brings a human one to its
    /// next pending query, then publishes the result.
    fn drive(&self, s: &mut Session) -> rulemine::Result<()> {
        match self.oracle {
            OracleMode::Simulated => self.run_simulated(s)?,
            OracleMode::Human => {
                self.issue(s)?;
            }
        }
        self.publish(s)
    }

    /// Snapshots the engine for readers and writes the checkpoint file.
    fn publish(&self, s: &Session) -> rulemine::Result<()> {
        s.checkpoint().save(self.dir.join("checkpoint.json"))?;
        let curve = s.curve()?;
        let accepted_rules = s
            .rule_nodes()
            .iter()
            .map(|&id| {
                let n = s.hierarchy().node(id);
                AcceptedRule {
                    pattern: n.heuristic.display(),
                    canonical: n.canonical.clone(),
                    coverage_size: n.coverage.len(),
                }
            })
            .collect();
        let hierarchy = Arc::new(s.hierarchy_dump());
        let mut view = self.view.write().expect("view lock");
        let st = &mut view.state;
        st.status = match s.status() {
            SessionStatus::AwaitingAnswer => Phase::AwaitingAnswer,
            SessionStatus::Done => Phase::Done,
            SessionStatus::Running => Phase::Advancing,
        };
        st.queries_used = s.queries().len();
        st.positives = s.positives().count_ones(..);
        st.rules = s.rule_nodes().len();
        st.recall = s.recall();
        st.curve = curve;
        st.accepted_rules = accepted_rules;
        st.pending_query_id = s.pending().map(|q| q.query_id);
        st.error = None;
        view.pending = s.pending().cloned();
        view.hierarchy = hierarchy;
        Ok(())
    }

    fn set_advancing(&self) {
        let mut view = self.view.write().expect("view lock");
        view.state.status = Phase::Advancing;
        view.state.pending_query_id = None;
        view.pending = None;
    }

    fn fail(&self, e: &Error) {
        tracing::error!(error = %e, dir = ?self.dir, "session failed");
        let mut view = self.view.write().expect("view lock");
        view.state.status = Phase::Failed;
        view.state.error = Some(e.to_string());
        view.pending = None;
        view.state.pending_query_id = None;
    }
}

// ---------------------------------------------------------------- app state

struct Shared {
    registry: Registry,
    shards: usize,
    corpora: Mutex<HashMap<String, Arc<Corpus>>>,
    indexes: Mutex<HashMap<(String, String), Arc<SketchIndex>>>,
    sessions: RwLock<HashMap<String, Arc<SessionCell>>>,
    next_id: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// Opens the registry and recovers every logged session by replay.
    pub fn open(registry: Registry, shards: usize) -> rulemine::Result<Self> {
        let state = AppState(Arc::new(Shared {
            registry,
            shards: shards.max(1),
            corpora: Mutex::default(),
            indexes: Mutex::default(),
            sessions: RwLock::default(),
            next_id: AtomicU64::new(1),
        }));
        state.recover()?;
        Ok(state)
    }

    pub fn registry(&self) -> &Registry {
        &self.0.registry
    }

    fn recover(&self) -> rulemine::Result<()> {
        let dir = self.0.registry.sessions_dir();
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("events.jsonl").is_file())
            .collect();
        dirs.sort();
        for d in dirs {
            if let Some(n) = d
                .file_name()
                .and_then(|f| f.to_str())
                .and_then(|f| f.strip_prefix("s-"))
                .and_then(|n| n.parse::<u64>().ok())
            {
                self.0.next_id.fetch_max(n + 1, Ordering::SeqCst);
            }
            match self.recover_one(&d) {
                Ok(id) => tracing::info!(session = %id, "recovered session"),
                Err(e) => tracing::warn!(dir = ?d, error = %e, "could not recover session"),
            }
        }
        Ok(())
    }

    fn recover_one(&self, dir: &std::path::Path) -> rulemine::Result<String> {
        let (log, events) = EventLog::open(dir.join("events.jsonl"))?;
        let r = replay(&events)?;
        let corpus = self.corpus(&r.corpus)?;
        let index = self.index(&r.corpus, &corpus, &r.checkpoint.grammar)?;
        let session = Session::restore(Arc::clone(&corpus), Arc::clone(&index), &r.checkpoint)?;
        let cell = self.cell(
            dir.to_path_buf(),
            &r.session_id,
            &r.corpus,
            r.oracle,
            r.created_at,
            corpus,
            index,
            log,
            r.last_issued,
            session,
        );
        cell.view.write().expect("view lock").state.notes = r.notes;
        let mut session = cell.engine.try_lock().expect("unshared session");
        // a crash after logging a YES but before applying it loses the accepted event
        for q in session.queries() {
            if q.answer && !r.accepted.contains(&q.query_id) {
                cell.record(&Event::Accepted {
                    query_id: q.query_id,
                    canonical: q.heuristic.canonical(),
                    coverage_size: q.coverage_size,
                })?;
            }
        }
        cell.drive(&mut session)?;
        drop(session);
        self.insert(&r.session_id, cell);
        Ok(r.session_id)
    }

    #[allow(clippy::too_many_arguments)]
    fn cell(
        &self,
        dir: PathBuf,
        id: &str,
        corpus_name: &str,
        oracle: OracleMode,
        created_at: u64,
        corpus: Arc<Corpus>,
        index: Arc<SketchIndex>,
        log: EventLog,
        last_issued: Option<u64>,
        session: Session,
    ) -> Arc<SessionCell> {
        let state = SessionState {
            v: API_VERSION,
            session_id: id.to_string(),
            corpus: corpus_name.to_string(),
            oracle,
            strategy: session.config().strategy,
            status: Phase::Advancing,
            queries_used: 0,
            budget: session.config().budget,
            positives: 0,
            rules: 0,
            recall: None,
            curve: Vec::new(),
            accepted_rules: Vec::new(),
            pending_query_id: None,
            created_at,
            notes: Vec::new(),
            error: None,
        };
        Arc::new(SessionCell {
            dir,
            oracle,
            corpus,
            index,
            engine: Arc::new(tokio::sync::Mutex::new(session)),
            journal: Mutex::new(Journal { log, last_issued }),
            view: RwLock::new(View {
                state,
                pending: None,
                hierarchy: Arc::new(Hierarchy::default().dump()),
            }),
        })
    }

    fn insert(&self, id: &str, cell: Arc<SessionCell>) {
        self.0
            .sessions
            .write()
            .expect("sessions lock")
            .insert(id.to_string(), cell);
    }

    fn corpus(&self, name: &str) -> rulemine::Result<Arc<Corpus>> {
        if let Some(c) = self.0.corpora.lock().expect("corpus cache").get(name) {
            return Ok(Arc::clone(c));
        }
        let corpus = Arc::new(self.0.registry.load_corpus(name)?);
        self.0
            .corpora
            .lock()
            .expect("corpus cache")
            .insert(name.to_string(), Arc::clone(&corpus));
        Ok(corpus)
    }

    fn index(&self, name: &str, corpus: &Corpus, grammar: &Grammar) -> rulemine::Result<Arc<SketchIndex>> {
        let key = (name.to_string(), index_file_name(grammar));
        if let Some(i) = self.0.indexes.lock().expect("index cache").get(&key) {
            return Ok(Arc::clone(i));
        }
        let index = Arc::new(self.0.registry.load_index(name, corpus, grammar, self.0.shards)?);
        self.0
            .indexes
            .lock()
            .expect("index cache")
            .insert(key, Arc::clone(&index));
        Ok(index)
    }

    fn forget_corpus(&self, name: &str) {
        self.0.corpora.lock().expect("corpus cache").remove(name);
        self.0
            .indexes
            .lock()
            .expect("index cache")
            .retain(|(n, _), _| n != name);
    }

    fn session(&self, id: &str) -> ApiResult<Arc<SessionCell>> {
        self.0
            .sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("session {id:?}")))
    }

    fn create_session(&self, req: CreateSession) -> ApiResult<(String, Phase)> {
        if !self.0.registry.exists(&req.corpus) {
            return Err(ApiError::NotFound(format!("corpus {:?}", req.corpus)));
        }
        let mut grammar = Grammar::new(req.grammar);
        if let Some(d) = req.max_depth {
            grammar = grammar.with_max_depth(d);
        }
        if let Some(g) = req.max_gaps {
            grammar = grammar.with_max_gaps(g);
        }
        grammar.validate()?;
        let mut config = req.config.unwrap_or_default();
        if let Some(s) = req.strategy {
            config.strategy = s;
        }
        if let Some(t) = req.tau {
            config.tau = t;
        }
        if let Some(b) = req.budget {
            config.budget = b;
        }
        let corpus = self.corpus(&req.corpus)?;
        if req.oracle == OracleMode::Simulated && !corpus.has_gold() {
            return Err(Error::MissingGold.into());
        }
        let index = self.index(&req.corpus, &corpus, &grammar)?;
        let session = Session::new(Arc::clone(&corpus), Arc::clone(&index), config.clone(), req.seed.clone())?;

        let (id, dir) = self.allocate()?;
        let created_at = now_secs();
        let mut log = EventLog::create(dir.join("events.jsonl"))?;
        log.append(&Event::Created {
            v: EVENT_VERSION,
            session_id: id.clone(),
            corpus: req.corpus.clone(),
            oracle: req.oracle,
            grammar,
            config,
            seed: req.seed,
            created_at,
        })?;
        let cell = self.cell(
            dir,
            &id,
            &req.corpus,
            req.oracle,
            created_at,
            corpus,
            index,
            log,
            None,
            session,
        );
        let mut session = cell.engine.try_lock().expect("unshared session");
        if let Err(e) = cell.drive(&mut session) {
            cell.fail(&e);
        }
        drop(session);
        let phase = cell.view.read().expect("view lock").state.status;
        self.insert(&id, cell);
        Ok((id, phase))
    }

    fn allocate(&self) -> rulemine::Result<(String, PathBuf)> {
        loop {
            let n = self.0.next_id.fetch_add(1, Ordering::SeqCst);
            let id = format!("s-{n:06}");
            let dir = self.0.registry.sessions_dir().join(&id);
            match std::fs::create_dir(&dir) {
                Ok(()) => return Ok((id, dir)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(Error::Io { path: dir, source: e }),
            }
        }
    }
}

// ---------------------------------------------------------------- handlers

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/corpora", get(list_corpora).post(create_corpus))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}/query", get(get_query))
        .route("/sessions/{id}/answer", post(post_answer))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/hierarchy", get(get_hierarchy))
        .route("/sessions/{id}/coverage", get(get_coverage))
        .route("/sessions/{id}/results", get(get_results))
        .route("/sessions/{id}/notes", post(post_note))
        .with_state(state)
}

async fn list_corpora(State(app): State<AppState>) -> ApiResult<Json<serde_json::Value>> {
    let corpora = tokio::task::spawn_blocking(move || app.registry().list()).await??;
    Ok(Json(json!({ "v": API_VERSION, "corpora": corpora })))
}

async fn create_corpus(
    State(app): State<AppState>,
    Json(req): Json<CreateCorpus>,
) -> ApiResult<(StatusCode, Json<CorpusInfo>)> {
    let info = tokio::task::spawn_blocking(move || -> ApiResult<CorpusInfo> {
        crate::registry::validate_name(&req.name)?;
        if app.registry().exists(&req.name) && !req.replace {
            return Err(ApiError::Conflict(format!("corpus {:?} already exists", req.name)));
        }
        let reader = std::io::Cursor::new(req.content.as_bytes());
        let corpus = match req.format {
            CorpusFormat::Jsonl => Corpus::read_jsonl(reader)?,
            CorpusFormat::Conllu => Corpus::read_conllu(reader)?,
        };
        let info = app.registry().ingest(&req.name, &corpus, req.replace)?;
        app.forget_corpus(&req.name);
        Ok(info)
    })
    .await??;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn list_sessions(State(app): State<AppState>) -> Json<serde_json::Value> {
    let mut sessions: Vec<serde_json::Value> = app
        .0
        .sessions
        .read()
        .expect("sessions lock")
        .values()
        .map(|c| {
            let st = &c.view.read().expect("view lock").state;
            json!({ "session_id": st.session_id, "corpus": st.corpus, "status": st.status })
        })
        .collect();
    sessions.sort_by(|a, b| a["session_id"].as_str().cmp(&b["session_id"].as_str()));
    Json(json!({ "v": API_VERSION, "sessions": sessions }))
}

async fn create_session(
    State(app): State<AppState>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let (id, status) = tokio::task::spawn_blocking(move || app.create_session(req)).await??;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "v": API_VERSION, "session_id": id, "status": status })),
    ))
}

fn advancing() -> Response {
    (
        StatusCode::ACCEPTED,
        Json(json!({ "v": API_VERSION, "status": Phase::Advancing })),
    )
        .into_response()
}

/// 200 with the pending query, 202 while advancing, 204 once done.
async fn get_query(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let cell = app.session(&id)?;
    let view = cell.view.read().expect("view lock");
    if let Some(q) = &view.pending {
        return Ok(Json(q).into_response());
    }
    match view.state.status {
        Phase::Done => Ok(StatusCode::NO_CONTENT.into_response()),
        Phase::Failed => Err(ApiError::Internal(view.state.error.clone().unwrap_or_default())),
        Phase::Advancing | Phase::AwaitingAnswer => Ok(advancing()),
    }
}

/// Persists the answer, then applies it in the background; poll `query`
/// or `state` for the next step.
async fn post_answer(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<AnswerBody>,
) -> ApiResult<Json<serde_json::Value>> {
    let cell = app.session(&id)?;
    let mut guard = Arc::clone(&cell.engine)
        .try_lock_owned()
        .map_err(|_| ApiError::Conflict(format!("query {}: session is advancing", body.query_id)))?;
    let canonical = match guard.pending() {
        Some(q) if q.query_id == body.query_id => q.heuristic.canonical(),
        Some(q) => {
            return Err(ApiError::Conflict(format!(
                "query {} is not pending (pending: {})",
                body.query_id, q.query_id
            )))
        }
        None => return Err(ApiError::Conflict(format!("query {}: no pending query", body.query_id))),
    };
    let yes = body.answer.yes();
    cell.record(&Event::Answered {
        query_id: body.query_id,
        canonical,
        answer: yes,
    })?;
    cell.set_advancing();
    let query_id = body.query_id;
    let worker = Arc::clone(&cell);
    tokio::task::spawn_blocking(move || {
        let s = &mut *guard;
        if let Err(e) = worker.apply(s, query_id, yes).and_then(|()| worker.drive(s)) {
            worker.fail(&e);
        }
    });
    Ok(Json(json!({
        "v": API_VERSION,
        "status": Phase::Advancing,
        "query_id": query_id,
        "answer": yes,
    })))
}

async fn get_state(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionState>> {
    let cell = app.session(&id)?;
    let state = cell.view.read().expect("view lock").state.clone();
    Ok(Json(state))
}

async fn get_hierarchy(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<HierarchyDump>> {
    let cell = app.session(&id)?;
    let dump = Arc::clone(&cell.view.read().expect("view lock").hierarchy);
    Ok(Json((*dump).clone()))
}

/// Sentence ids matched by `rule`, or by the pending query's rule.
async fn get_coverage(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<CoverageParams>,
) -> ApiResult<Json<serde_json::Value>> {
    let cell = app.session(&id)?;
    let pending = cell.view.read().expect("view lock").pending.clone();
    tokio::task::spawn_blocking(move || {
        let h = match params.rule {
            Some(text) => cell.index.as_dyn().grammar().parse(&text)?,
            None => {
                pending
                    .ok_or_else(|| ApiError::Unprocessable("no pending query; pass ?rule=".into()))?
                    .heuristic
            }
        };
        let coverage = cell.index.as_dyn().coverage(&h)?;
        let mut ids = cell.corpus.ids(coverage.iter().copied());
        ids.sort_unstable();
        if let Some(limit) = params.limit {
            ids.truncate(limit);
        }
        Ok(Json(json!({
            "v": API_VERSION,
            "rule": h.display(),
            "canonical": h.canonical(),
            "coverage_size": coverage.len(),
            "ids": ids,
        })))
    })
    .await?
}

/// Rules, positives, query log and metrics; 202 while advancing.
async fn get_results(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let cell = app.session(&id)?;
    let Ok(guard) = Arc::clone(&cell.engine).try_lock_owned() else {
        return Ok(advancing());
    };
    let results = tokio::task::spawn_blocking(move || guard.results()).await??;
    Ok(Json(results).into_response())
}

async fn post_note(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<NoteBody>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let cell = app.session(&id)?;
    let note = Note {
        text: body.text,
        at: now_secs(),
    };
    cell.record(&Event::Note(note.clone()))?;
    let mut view = cell.view.write().expect("view lock");
    view.state.notes.push(note);
    Ok((
        StatusCode::CREATED,
        Json(json!({ "v": API_VERSION, "notes": view.state.notes.len() })),
    ))
}
