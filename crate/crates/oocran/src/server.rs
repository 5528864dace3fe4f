//! HTTP service. Handlers never touch the orchestrator directly: each one
//! sends a closure to a single actor thread and awaits the reply, so all
//! mutations are applied in arrival order.

use std::convert::Infallible;
use std::fs;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::StreamExt;
use oocran_core::catalog::{Catalog, CatalogError, DescriptorRef, NsDescriptor, VnfDescriptor};
use oocran_core::fixtures;
use oocran_core::infra::Inventory;
use oocran_core::lifecycle::{DecisionOutcome, LifecycleError};
use oocran_core::monitor::{AlarmRule, SeriesKey, WebhookPayload};
use oocran_core::orchestrator::{Orchestrator, OrchestratorConfig, Snapshot};
use oocran_core::sim::Scenario;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc, oneshot, watch};

pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub host: IpAddr,
    pub port: u16,
    pub data_dir: Option<PathBuf>,
    pub inventory: Option<PathBuf>,
    pub token: String,
    /// Wall-clock milliseconds per simulated tick; 0 steps only on request.
    pub tick_ms: u64,
    /// Start without the stock descriptors and demo alarm rule.
    pub empty_catalog: bool,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            data_dir: None,
            inventory: None,
            token: fixtures::DEMO_TOKEN.into(),
            tick_ms: 1000,
            empty_catalog: false,
        }
    }
}

type Job = Box<dyn FnOnce(&mut Orchestrator) + Send>;

#[derive(Clone)]
pub struct AppState {
    inbox: mpsc::UnboundedSender<Job>,
    events: broadcast::Sender<String>,
    token: Arc<str>,
    shutdown: watch::Receiver<bool>,
}

impl AppState {
    async fn call<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Orchestrator) -> T + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        self.inbox
            .send(Box::new(move |o| {
                let _ = tx.send(f(o));
            }))
            .map_err(|_| ApiError::unavailable())?;
        rx.await.map_err(|_| ApiError::unavailable())
    }
}

/// Run jobs one at a time, publishing new events after each.
fn spawn_actor(
    mut orch: Orchestrator,
    events: broadcast::Sender<String>,
) -> mpsc::UnboundedSender<Job> {
    let (tx, mut rx) = mpsc::unbounded_channel::<Job>();
    std::thread::spawn(move || {
        let mut published = orch.events().len();
        while let Some(job) = rx.blocking_recv() {
            job(&mut orch);
            for e in &orch.events()[published..] {
                if let Ok(line) = serde_json::to_string(e) {
                    let _ = events.send(line);
                }
            }
            published = orch.events().len();
        }
    });
    tx
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    violations: Vec<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            violations: Vec::new(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "orchestrator stopped")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if !self.violations.is_empty() {
            body["violations"] = json!(self.violations);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        match &e {
            CatalogError::NotFound { .. } => Self::not_found(e.to_string()),
            CatalogError::Conflict { .. } => Self::new(StatusCode::CONFLICT, e.to_string()),
            CatalogError::Invalid(v) => Self {
                violations: v.iter().map(|x| x.0.clone()).collect(),
                ..Self::bad_request("validation failed")
            },
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl From<LifecycleError> for ApiError {
    fn from(e: LifecycleError) -> Self {
        match e {
            LifecycleError::NotFound(_) => Self::not_found(e.to_string()),
            LifecycleError::IllegalState { .. } => Self::new(StatusCode::CONFLICT, e.to_string()),
            LifecycleError::Validation(v) => Self {
                violations: v.into_iter().map(|x| x.0).collect(),
                ..Self::bad_request("validation failed")
            },
            LifecycleError::Catalog(c) => c.into(),
            LifecycleError::UnknownTask(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

fn authorize(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(&*state.token) {
        Ok(())
    } else {
        Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "missing or invalid bearer token",
        ))
    }
}

fn descriptor_ref(s: &str) -> ApiResult<DescriptorRef> {
    DescriptorRef::parse(s)
        .ok_or_else(|| ApiError::bad_request(format!("expected name/version, got {s:?}")))
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn list_vnfds(State(s): State<AppState>) -> ApiResult<Json<Vec<VnfDescriptor>>> {
    Ok(Json(s.call(|o| o.catalog().list_vnfds()).await?))
}

async fn add_vnfd(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    authorize(&s, &headers)?;
    let d: VnfDescriptor = parse(&body)?;
    let r = s.call(move |o| o.catalog().store_vnfd(d)).await??;
    Ok((StatusCode::CREATED, Json(json!({ "ref": r.to_string() }))))
}

async fn list_nsds(State(s): State<AppState>) -> ApiResult<Json<Vec<NsDescriptor>>> {
    Ok(Json(s.call(|o| o.catalog().list_nsds()).await?))
}

async fn add_nsd(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    authorize(&s, &headers)?;
    let d: NsDescriptor = parse(&body)?;
    let r = s.call(move |o| o.catalog().store_nsd(d)).await??;
    Ok((StatusCode::CREATED, Json(json!({ "ref": r.to_string() }))))
}

#[derive(Deserialize)]
struct NsdBody {
    nsd: String,
}

fn ns_summary(o: &Orchestrator, ns_id: &str) -> Value {
    let state = o.instance(ns_id).map(|n| n.state.to_string());
    json!({ "ns_id": ns_id, "state": state })
}

async fn deploy(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    authorize(&s, &headers)?;
    let b: NsdBody = parse(&body)?;
    let nsd = descriptor_ref(&b.nsd)?;
    let v = s
        .call(move |o| o.deploy(&nsd).map(|id| ns_summary(o, &id)))
        .await??;
    Ok((StatusCode::CREATED, Json(v)))
}

async fn list_ns(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.call(|o| o.instances()).await?))
}

async fn get_ns(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<impl IntoResponse> {
    let missing = format!("network service {id} not found");
    let ns = s.call(move |o| o.instance(&id)).await?;
    ns.map(Json).ok_or_else(|| ApiError::not_found(missing))
}

async fn reconfigure(
    State(s): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    authorize(&s, &headers)?;
    let b: NsdBody = parse(&body)?;
    let nsd = descriptor_ref(&b.nsd)?;
    let v = s
        .call(move |o| o.reconfigure(&id, &nsd).map(|_| ns_summary(o, &id)))
        .await??;
    Ok((StatusCode::ACCEPTED, Json(v)))
}

async fn terminate(
    State(s): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<impl IntoResponse> {
    authorize(&s, &headers)?;
    let v = s
        .call(move |o| o.terminate(&id).map(|_| ns_summary(o, &id)))
        .await??;
    Ok((StatusCode::ACCEPTED, Json(v)))
}

async fn infra(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.call(|o| json!({ "nodes": o.capacity() })).await?))
}

async fn spectrum(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.call(|o| o.spectrum()).await?))
}

#[derive(Deserialize)]
struct TasksQuery {
    ns_id: Option<String>,
}

async fn tasks(
    State(s): State<AppState>,
    Query(q): Query<TasksQuery>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.call(move |o| o.tasks(q.ns_id.as_deref())).await?))
}

#[derive(Deserialize)]
struct MetricsQuery {
    scope: String,
    scope_id: String,
    metric: String,
    t0: Option<f64>,
    t1: Option<f64>,
}

async fn query(
    State(s): State<AppState>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<impl IntoResponse> {
    let scope = q
        .scope
        .parse()
        .map_err(|e| ApiError::bad_request(format!("{e}")))?;
    let metric = q
        .metric
        .parse()
        .map_err(|e| ApiError::bad_request(format!("{e}")))?;
    let key = SeriesKey::new(scope, q.scope_id, metric)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let (t0, t1) = (
        q.t0.unwrap_or(f64::NEG_INFINITY),
        q.t1.unwrap_or(f64::INFINITY),
    );
    let v = s
        .call(move |o| {
            let points: Vec<[f64; 2]> = o
                .monitor()
                .store
                .query_range(&key, t0, t1)
                .into_iter()
                .map(|p| [p.t, p.value])
                .collect();
            json!({ "series": key.to_string(), "points": points })
        })
        .await?;
    Ok(Json(v))
}

async fn webhook(State(s): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let payload: WebhookPayload = parse(&body)?;
    let d = s
        .call(move |o| o.webhook(&payload))
        .await?
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let status = match &d.outcome {
        DecisionOutcome::Suppressed { reason } if reason == "unauthorized" => {
            StatusCode::UNAUTHORIZED
        }
        _ => StatusCode::OK,
    };
    Ok((status, Json(d)))
}

async fn load_scenario(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    authorize(&s, &headers)?;
    let scenario: Scenario = parse(&body)?;
    let now = s
        .call(move |o| o.load_scenario(&scenario).map(|_| o.now()))
        .await?
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "now": now }))))
}

#[derive(Deserialize)]
struct TickQuery {
    n: Option<u64>,
}

async fn tick(
    State(s): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<TickQuery>,
) -> ApiResult<impl IntoResponse> {
    authorize(&s, &headers)?;
    let n = q.n.unwrap_or(1);
    let now = s
        .call(move |o| {
            o.advance(n);
            o.now()
        })
        .await?;
    Ok(Json(json!({ "now": now })))
}

#[derive(Deserialize)]
struct EventsQuery {
    /// Keep the stream open for new events (default true).
    follow: Option<bool>,
}

async fn events(State(s): State<AppState>, Query(q): Query<EventsQuery>) -> ApiResult<Response> {
    let tx = s.events.clone();
    // Subscribing inside the actor means no event falls between history and live.
    let (history, rx) = s
        .call(move |o| {
            let lines: Vec<String> = o
                .events()
                .iter()
                .filter_map(|e| serde_json::to_string(e).ok())
                .collect();
            (lines, tx.subscribe())
        })
        .await?;
    let history = futures::stream::iter(history);
    let body = if q.follow.unwrap_or(true) {
        let live = futures::stream::unfold(rx, |mut rx| async move {
            loop {
                match rx.recv().await {
                    Ok(line) => return Some((line, rx)),
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            }
        });
        let mut shutdown = s.shutdown.clone();
        let stop = async move {
            let _ = shutdown.wait_for(|down| *down).await;
        };
        let lines = history.chain(live).take_until(stop);
        Body::from_stream(lines.map(|l| Ok::<_, Infallible>(format!("{l}\n"))))
    } else {
        Body::from_stream(history.map(|l| Ok::<_, Infallible>(format!("{l}\n"))))
    };
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/vnfds", get(list_vnfds).post(add_vnfd))
        .route("/nsds", get(list_nsds).post(add_nsd))
        .route("/ns", get(list_ns).post(deploy))
        .route("/ns/{id}", get(get_ns).delete(terminate))
        .route("/ns/{id}/reconfigure", post(reconfigure))
        .route("/infra", get(infra))
        .route("/spectrum", get(spectrum))
        .route("/tasks", get(tasks))
        .route("/metrics/query", get(query))
        .route("/alarms/webhook", post(webhook))
        .route("/sim/scenario", post(load_scenario))
        .route("/sim/tick", post(tick))
        .route("/events", get(events))
        .with_state(state)
}

fn snapshot_path(dir: &Path) -> PathBuf {
    dir.join(SNAPSHOT_FILE)
}

pub fn write_snapshot(dir: &Path, snap: &Snapshot) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec_pretty(snap)?)?;
    fs::rename(&tmp, snapshot_path(dir))?;
    Ok(())
}

/// Restore from the data dir's snapshot if present, else start fresh.
pub fn build_orchestrator(cfg: &ServeConfig) -> anyhow::Result<Orchestrator> {
    let inventory = match &cfg.inventory {
        Some(p) => Some(
            Inventory::load(p).with_context(|| format!("cannot load inventory {}", p.display()))?,
        ),
        None => None,
    };
    let catalog = match &cfg.data_dir {
        Some(d) => Catalog::open(d.join("catalog")).context("cannot open catalog")?,
        None => Catalog::new(),
    };
    if let Some(dir) = &cfg.data_dir {
        let path = snapshot_path(dir);
        if path.exists() {
            let bytes = fs::read(&path)?;
            let snap: Snapshot = serde_json::from_slice(&bytes)
                .with_context(|| format!("corrupt snapshot {}", path.display()))?;
            tracing::info!(now = snap.now, "restoring snapshot");
            return Ok(Orchestrator::restore(catalog, snap)?);
        }
    }
    if !cfg.empty_catalog {
        catalog.load_contents(fixtures::demo_contents())?;
    }
    let config = OrchestratorConfig {
        token: cfg.token.clone(),
        ..OrchestratorConfig::default()
    };
    let mut o = Orchestrator::new(
        catalog,
        inventory.unwrap_or_else(fixtures::testbed_inventory),
        config,
    )?;
    if !cfg.empty_catalog {
        o.add_alarm_rule(AlarmRule {
            webhook_token: cfg.token.clone(),
            ..fixtures::demo_alarm_rule()
        })?;
    }
    Ok(o)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
        {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

#[derive(Serialize)]
struct Listening {
    listening: SocketAddr,
}

/// Serve until SIGINT/SIGTERM, then write the snapshot.
pub async fn serve(cfg: ServeConfig) -> anyhow::Result<()> {
    let orch = build_orchestrator(&cfg)?;
    let listener = tokio::net::TcpListener::bind((cfg.host, cfg.port))
        .await
        .with_context(|| format!("cannot bind {}:{}", cfg.host, cfg.port))?;
    let addr = listener.local_addr()?;
    // First stdout line announces the bound address (useful with --port 0).
    println!("{}", serde_json::to_string(&Listening { listening: addr })?);
    tracing::info!(%addr, "serving");

    let (events_tx, _) = broadcast::channel(4096);
    let (down_tx, down_rx) = watch::channel(false);
    let state = AppState {
        inbox: spawn_actor(orch, events_tx.clone()),
        events: events_tx,
        token: cfg.token.clone().into(),
        shutdown: down_rx,
    };

    let ticker = (cfg.tick_ms > 0).then(|| {
        let s = state.clone();
        let period = Duration::from_millis(cfg.tick_ms);
        tokio::spawn(async move {
            let mut every = tokio::time::interval(period);
            loop {
                every.tick().await;
                if s.call(|o| o.step()).await.is_err() {
                    break;
                }
            }
        })
    });

    let signal = async move {
        shutdown_signal().await;
        let _ = down_tx.send(true);
    };
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(signal)
        .await?;
    if let Some(t) = ticker {
        t.abort();
    }
    if let Some(dir) = &cfg.data_dir {
        let snap = state
            .call(|o| o.snapshot())
            .await
            .map_err(|e| anyhow::anyhow!(e.message))?;
        write_snapshot(dir, &snap)?;
        tracing::info!(path = %snapshot_path(dir).display(), "snapshot written");
    }
    Ok(())
}
