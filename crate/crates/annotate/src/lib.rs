//! HTTP front end for the annotation store.
//!
//! All mutations take the store's write lock, so they are applied one at a
//! time in arrival order; readers see a consistent snapshot.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use finsts_core::annotate::{
    instructions, AdjudicationRecord, AgreementMode, AnnotateError, AnnotationLabel, AnnotationStore, AnnotationTask,
    TaskStatus,
};
use finsts_core::augment::ShiftCategory;
use finsts_core::jsonl;
use finsts_core::matching::PairRecord;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    pub listen: Option<SocketAddr>,
    /// Pair records (JSON Lines) loaded into the store at startup.
    pub corpus: Option<PathBuf>,
    pub event_log: Option<PathBuf>,
    /// Directory with the browser bundle, served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Allowed annotator ids. Empty means any id is accepted and registered
    /// on first use.
    pub annotators: Vec<String>,
    pub agreement_mode: AgreementMode,
}

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8787";

#[derive(Debug)]
pub struct AppState {
    store: RwLock<AnnotationStore>,
    open_registration: bool,
    agreement_mode: AgreementMode,
}

impl AppState {
    pub fn new(store: AnnotationStore, open_registration: bool, agreement_mode: AgreementMode) -> Self {
        AppState { store: RwLock::new(store), open_registration, agreement_mode }
    }

    /// Opens or creates the store and loads the corpus.
    pub fn from_config(cfg: &ServerConfig) -> Result<Self, AnnotateError> {
        let mut store = match &cfg.event_log {
            Some(p) => AnnotationStore::open(p)?,
            None => AnnotationStore::in_memory(),
        };
        if let Some(corpus) = &cfg.corpus {
            let pairs: Vec<PairRecord> = jsonl::read(corpus)?;
            let added = store.load_pairs(pairs)?;
            log::info!("loaded {added} new pairs from {}", corpus.display());
        }
        for a in &cfg.annotators {
            store.register_annotator(a)?;
        }
        Ok(Self::new(store, cfg.annotators.is_empty(), cfg.agreement_mode))
    }

    pub fn with_store<T>(&self, f: impl FnOnce(&AnnotationStore) -> T) -> T {
        f(&self.store.read().expect("store lock"))
    }
}

pub struct ApiError(AnnotateError);

impl From<AnnotateError> for ApiError {
    fn from(e: AnnotateError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use AnnotateError::*;
        let status = match &self.0 {
            UnknownPair(_) => StatusCode::NOT_FOUND,
            UnknownAnnotator(_) => StatusCode::FORBIDDEN,
            DuplicateLabel { .. } | TaskFull(_) | NotConflicted(_) | DuplicatePair(_) => StatusCode::CONFLICT,
            MissingCategory | UnexpectedCategory | InvalidScore(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub annotator: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextPairResponse {
    #[serde(flatten)]
    pub task: AnnotationTask,
    pub instructions: String,
}

async fn next_pair(State(st): State<Arc<AppState>>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    if st.open_registration && !st.with_store(|s| s.is_registered(&q.annotator)) {
        st.store.write().expect("store lock").register_annotator(&q.annotator)?;
    }
    let task = st.with_store(|s| s.next_pair(&q.annotator))?;
    Ok(match task {
        Some(task) => Json(NextPairResponse { task, instructions: instructions() }).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelRequest {
    pub pair_id: String,
    pub annotator: String,
    pub score: i8,
    #[serde(default)]
    pub category: Option<ShiftCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatusResponse {
    pub status: TaskStatus,
}

async fn submit_label(State(st): State<Arc<AppState>>, Json(req): Json<LabelRequest>) -> Result<Json<StatusResponse>, ApiError> {
    let mut store = st.store.write().expect("store lock");
    if st.open_registration {
        store.register_annotator(&req.annotator)?;
    }
    let status = store.submit_label(AnnotationLabel {
        pair_id: req.pair_id,
        annotator_id: req.annotator,
        score: req.score,
        category: req.category,
        timestamp: now_ms(),
    })?;
    Ok(Json(StatusResponse { status }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConflictView {
    #[serde(flatten)]
    pub task: AnnotationTask,
    pub labels: Vec<AnnotationLabel>,
}

async fn conflicts(State(st): State<Arc<AppState>>) -> Result<Json<Vec<ConflictView>>, ApiError> {
    st.with_store(|s| {
        s.conflicts()
            .into_iter()
            .map(|task| Ok(ConflictView { labels: s.labels(&task.pair.id)?, task }))
            .collect::<Result<Vec<_>, AnnotateError>>()
    })
    .map(Json)
    .map_err(ApiError)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AdjudicationRequest {
    pub pair_id: String,
    pub adjudicator: String,
    pub score: i8,
    #[serde(default)]
    pub category: Option<ShiftCategory>,
    #[serde(default)]
    pub note: String,
}

async fn adjudicate(
    State(st): State<Arc<AppState>>,
    Json(req): Json<AdjudicationRequest>,
) -> Result<Json<StatusResponse>, ApiError> {
    let status = st.store.write().expect("store lock").adjudicate(AdjudicationRecord {
        pair_id: req.pair_id,
        adjudicator_id: req.adjudicator,
        score: req.score,
        category: req.category,
        note: req.note,
        timestamp: now_ms(),
    })?;
    Ok(Json(StatusResponse { status }))
}

#[derive(Debug, Deserialize)]
pub struct KappaQuery {
    pub mode: Option<AgreementMode>,
}

/// `kappa` is null until some pair holds two labels.
#[derive(Debug, Serialize, Deserialize)]
pub struct KappaResponse {
    pub kappa: Option<f64>,
    pub n_pairs: usize,
}

async fn kappa(State(st): State<Arc<AppState>>, Query(q): Query<KappaQuery>) -> Result<Json<KappaResponse>, ApiError> {
    let mode = q.mode.unwrap_or(st.agreement_mode);
    match st.with_store(|s| s.compute_agreement(mode)) {
        Ok(a) => Ok(Json(KappaResponse { kappa: Some(a.kappa), n_pairs: a.n_pairs })),
        Err(AnnotateError::NoDoublyLabeled) => Ok(Json(KappaResponse { kappa: None, n_pairs: 0 })),
        Err(e) => Err(e.into()),
    }
}

async fn export(State(st): State<Arc<AppState>>) -> Response {
    let body = st.with_store(|s| jsonl::to_string(&s.export_labels()));
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/pairs/next", get(next_pair))
        .route("/pairs/conflicts", get(conflicts))
        .route("/labels", post(submit_label))
        .route("/adjudications", post(adjudicate))
        .route("/metrics/kappa", get(kappa))
        .route("/export", get(export))
        .with_state(state);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Serves on an already bound listener until the future is dropped.
pub async fn serve_on(listener: tokio::net::TcpListener, state: Arc<AppState>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    axum::serve(listener, router(state, static_dir)).await
}

#[derive(Debug)]
pub enum ServeError {
    Store(AnnotateError),
    Io(std::io::Error),
}

impl std::fmt::Display for ServeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServeError::Store(e) => write!(f, "annotation store: {e}"),
            ServeError::Io(e) => write!(f, "server: {e}"),
        }
    }
}

impl std::error::Error for ServeError {}

pub async fn serve(cfg: ServerConfig) -> Result<(), ServeError> {
    let state = Arc::new(AppState::from_config(&cfg).map_err(ServeError::Store)?);
    let addr = cfg.listen.unwrap_or_else(|| DEFAULT_LISTEN.parse().expect("valid default address"));
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(ServeError::Io)?;
    log::info!("annotation service listening on {}", listener.local_addr().map_err(ServeError::Io)?);
    serve_on(listener, state, cfg.static_dir).await.map_err(ServeError::Io)
}
