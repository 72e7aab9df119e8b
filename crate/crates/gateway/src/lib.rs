//! HTTP control surface for a running simulation.
//!
//! Reads are served from the latest published snapshot and never touch the
//! engine. Mutations are validated against that snapshot (unknown ids give
//! 404, infeasible changes 409, malformed bodies 400) and then queued as
//! commands; the 202 response names the tick at which they apply.
//!
//! Every response that reflects simulation state carries `tick`, the last
//! completed tick (`null` before the first one). A mutation acknowledged
//! for tick `t` is visible in every read whose `tick` is at least `t`.

use std::collections::{BTreeMap, VecDeque};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use ransim_core::engine::Snapshot;
use ransim_core::live::{SimHandle, StreamEvent};
use ransim_core::presets;
use ransim_core::{
    CommandError, CommandKind, Origin, RampMode, Scenario, ServiceClass, TrafficProfile,
};

/// Overrides the port of the bind address when set.
pub const PORT_ENV: &str = "RANSIM_API_PORT";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(#[from] std::io::Error),
    #[error("{PORT_ENV} is not a port number: {0:?}")]
    BadPort(String),
}

#[derive(Clone, Debug)]
pub struct GatewayConfig {
    /// How often an open event stream checks for new events.
    pub poll_interval: Duration,
    /// Comment line sent on an idle event stream.
    pub heartbeat: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            poll_interval: Duration::from_millis(50),
            heartbeat: Duration::from_secs(5),
        }
    }
}

#[derive(Clone)]
struct AppState {
    sim: SimHandle,
    config: Arc<GatewayConfig>,
}

/// Applies the port override from the environment to `addr`.
pub fn resolve_bind(mut addr: SocketAddr) -> Result<SocketAddr, GatewayError> {
    if let Ok(port) = std::env::var(PORT_ENV) {
        let port = port.trim().parse().map_err(|_| GatewayError::BadPort(port.clone()))?;
        addr.set_port(port);
    }
    Ok(addr)
}

pub fn router(sim: SimHandle) -> Router {
    router_with(sim, GatewayConfig::default())
}

pub fn router_with(sim: SimHandle, config: GatewayConfig) -> Router {
    let state = AppState {
        sim,
        config: Arc::new(config),
    };
    Router::new()
        .route("/network", get(get_network))
        .route("/loads", get(get_loads))
        .route("/sectors/{id}", get(get_sector).patch(patch_sector))
        .route("/ues", post(post_ue))
        .route("/ues/{id}", get(get_ue).patch(patch_ue).delete(delete_ue))
        .route("/ues/{id}/traffic", post(post_traffic))
        .route("/stats/handover", get(get_stats))
        .route("/metrics/export", get(get_export))
        .route("/metrics/query", get(get_query))
        .route("/sim", post(post_sim))
        .route("/scenarios", post(post_scenario))
        .route("/events", get(get_events))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(sim: SimHandle, addr: SocketAddr) -> Result<(), GatewayError> {
    serve_until(sim, addr, std::future::pending()).await
}

pub async fn serve_until(
    sim: SimHandle,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), GatewayError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| GatewayError::Bind { addr, source })?;
    serve_listener(sim, listener, shutdown).await
}

/// Serves on a socket bound by the caller, e.g. synchronously before the
/// runtime starts so bind errors surface early.
pub async fn serve_std(
    sim: SimHandle,
    listener: std::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), GatewayError> {
    listener.set_nonblocking(true)?;
    serve_listener(sim, tokio::net::TcpListener::from_std(listener)?, shutdown).await
}

async fn serve_listener(
    sim: SimHandle,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), GatewayError> {
    log::info!("gateway listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(sim))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}

// ---------------------------------------------------------------- errors

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(m: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: m.into(),
        }
    }

    fn not_found(kind: &str, id: &str) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            message: format!("unknown {kind} {id:?}"),
        }
    }

    fn conflict(m: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::CONFLICT,
            message: m.into(),
        }
    }
}

impl From<CommandError> for ApiError {
    fn from(e: CommandError) -> Self {
        ApiError::bad_request(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

// ----------------------------------------------------------------- reads

fn last_tick(snap: &Snapshot) -> Option<u64> {
    snap.report.as_ref().map(|r| r.tick)
}

async fn get_network(State(st): State<AppState>) -> Json<serde_json::Value> {
    let snap = st.sim.snapshot();
    Json(json!({
        "tick": last_tick(&snap),
        "paused": snap.paused,
        "strategy": snap.strategy,
        "policy": snap.policy,
        "weights": snap.weights,
        "network": snap.network,
    }))
}

async fn get_loads(State(st): State<AppState>) -> Json<serde_json::Value> {
    let snap = st.sim.snapshot();
    Json(json!({ "tick": last_tick(&snap), "loads": snap.report }))
}

#[derive(Serialize)]
struct SectorView<'a> {
    tick: Option<u64>,
    id: &'a str,
    cell_id: &'a str,
    gnb_id: &'a str,
    ue_capacity: u32,
    max_throughput_bps: f64,
    attached_ues: Vec<&'a str>,
    /// Sum of attached UE throughputs, bytes/s, as of `tick`.
    throughput_bps: f64,
    load: Option<f64>,
}

async fn get_sector(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let snap = st.sim.snapshot();
    let net = &snap.network;
    let sector = net.sector(&id).map_err(|_| ApiError::not_found("sector", &id))?;
    let view = SectorView {
        tick: last_tick(&snap),
        id: &id,
        cell_id: &sector.cell_id,
        gnb_id: net.gnb_of(&id).unwrap_or_default(),
        ue_capacity: sector.ue_capacity(),
        max_throughput_bps: sector.max_throughput(),
        attached_ues: sector.attached_ue_ids().iter().map(String::as_str).collect(),
        throughput_bps: ransim_core::loadmetrics::sector_throughput(sector, net.ues()),
        load: snap.report.as_ref().and_then(|r| r.sector(&id)),
    };
    Ok(Json(view).into_response())
}

async fn get_ue(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let snap = st.sim.snapshot();
    let ue = snap.network.ue(&id).map_err(|_| ApiError::not_found("UE", &id))?;
    Ok(Json(json!({
        "tick": last_tick(&snap),
        "ue": ue,
        "log": snap.ue_logs.get(&id).cloned().unwrap_or_default(),
    })))
}

async fn get_stats(State(st): State<AppState>) -> Json<serde_json::Value> {
    let snap = st.sim.snapshot();
    Json(json!({ "tick": last_tick(&snap), "stats": snap.stats }))
}

fn tick_param(q: &BTreeMap<String, String>, key: &str) -> ApiResult<Option<u64>> {
    q.get(key)
        .map(|v| v.parse().map_err(|_| ApiError::bad_request(format!("{key} must be a tick number"))))
        .transpose()
}

fn tick_range(q: &BTreeMap<String, String>) -> ApiResult<(u64, u64)> {
    Ok((tick_param(q, "from")?.unwrap_or(0), tick_param(q, "to")?.unwrap_or(u64::MAX)))
}

async fn get_export(
    State(st): State<AppState>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Response> {
    let (from, to) = tick_range(&q)?;
    let metrics = st.sim.metrics();
    let text = metrics
        .read()
        .unwrap_or_else(|e| e.into_inner())
        .export_line_protocol(from..=to);
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

/// `?measurement=sector_load&sector=g1c1s1&from=3&to=9`; every parameter
/// other than measurement/from/to is a tag filter.
async fn get_query(
    State(st): State<AppState>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Json<serde_json::Value>> {
    let measurement = q
        .get("measurement")
        .ok_or_else(|| ApiError::bad_request("measurement is required"))?;
    let (from, to) = tick_range(&q)?;
    let filters: Vec<(&str, &str)> = q
        .iter()
        .filter(|(k, _)| !matches!(k.as_str(), "measurement" | "from" | "to"))
        .map(|(k, v)| (k.as_str(), v.as_str()))
        .collect();
    let metrics = st.sim.metrics();
    let store = metrics.read().unwrap_or_else(|e| e.into_inner());
    let points: Vec<serde_json::Value> = store
        .query(measurement, &filters, from..=to)
        .iter()
        .map(|p| {
            json!({
                "tick": store.tick_for(p.timestamp),
                "timestamp": p.timestamp,
                "tags": p.tags,
                "fields": p.fields,
            })
        })
        .collect();
    Ok(Json(json!({ "measurement": measurement, "points": points })))
}

// ------------------------------------------------------------- mutations

#[derive(Serialize)]
struct Accepted {
    apply_tick: u64,
    seqs: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ue_id: Option<String>,
}

fn accepted(body: Accepted) -> Response {
    (StatusCode::ACCEPTED, Json(body)).into_response()
}

fn submit_all(sim: &SimHandle, kinds: Vec<CommandKind>) -> ApiResult<Accepted> {
    // validate everything before enqueueing anything
    for k in &kinds {
        k.validate()?;
    }
    let mut out = Accepted {
        apply_tick: 0,
        seqs: Vec::new(),
        ue_id: None,
    };
    for k in kinds {
        let ack = sim.submit(Origin::Api, k)?;
        out.apply_tick = ack.apply_tick;
        out.seqs.push(ack.seq);
    }
    Ok(out)
}

fn require_ue(snap: &Snapshot, id: &str) -> ApiResult<()> {
    snap.network.ue(id).map(|_| ()).map_err(|_| ApiError::not_found("UE", id))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewUe {
    ue_id: Option<String>,
    service_class: ServiceClass,
    profile: Option<TrafficProfile>,
    sector_id: Option<String>,
}

async fn post_ue(State(st): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: NewUe = parse_body(&body)?;
    let snap = st.sim.snapshot();
    if let Some(id) = &req.ue_id {
        if snap.network.ue(id).is_ok() {
            return Err(ApiError::conflict(format!("UE {id:?} already exists")));
        }
    }
    if let Some(sector) = &req.sector_id {
        let s = snap
            .network
            .sector(sector)
            .map_err(|_| ApiError::not_found("sector", sector))?;
        if !s.has_free_capacity() {
            return Err(ApiError::conflict(format!("sector {sector:?} is full")));
        }
    }
    let ue_id = req.ue_id.unwrap_or_else(|| st.sim.queue().fresh_ue_id());
    let mut acc = submit_all(
        &st.sim,
        vec![CommandKind::AddUe {
            ue_id: Some(ue_id.clone()),
            service_class: req.service_class,
            profile: req.profile,
            sector_id: req.sector_id,
        }],
    )?;
    acc.ue_id = Some(ue_id);
    Ok(accepted(acc))
}

async fn delete_ue(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    require_ue(&st.sim.snapshot(), &id)?;
    Ok(accepted(submit_all(&st.sim, vec![CommandKind::DelUe { ue_id: id }])?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficAction {
    action: String,
}

async fn post_traffic(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: TrafficAction = parse_body(&body)?;
    let kind = match req.action.as_str() {
        "start" => CommandKind::StartUeTraffic { ue_id: id.clone() },
        "stop" => CommandKind::StopUeTraffic { ue_id: id.clone() },
        other => return Err(ApiError::bad_request(format!("action must be start or stop, got {other:?}"))),
    };
    require_ue(&st.sim.snapshot(), &id)?;
    Ok(accepted(submit_all(&st.sim, vec![kind])?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UePatch {
    /// Bytes per second, like every throughput in the simulator.
    throughput_bps: Option<f64>,
    delay_s: Option<f64>,
    profile: Option<TrafficProfile>,
}

async fn patch_ue(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: UePatch = parse_body(&body)?;
    let mut kinds = Vec::new();
    if let Some(profile) = req.profile {
        kinds.push(CommandKind::SetProfile { ue_id: id.clone(), profile });
    }
    if let Some(throughput) = req.throughput_bps {
        kinds.push(CommandKind::SetUeThroughput { ue_id: id.clone(), throughput });
    }
    if let Some(delay) = req.delay_s {
        kinds.push(CommandKind::SetUeDelay { ue_id: id.clone(), delay });
    }
    if kinds.is_empty() {
        return Err(ApiError::bad_request("expected throughput_bps, delay_s or profile"));
    }
    require_ue(&st.sim.snapshot(), &id)?;
    Ok(accepted(submit_all(&st.sim, kinds)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SectorPatch {
    ue_capacity: Option<u32>,
    max_throughput_bps: Option<f64>,
}

async fn patch_sector(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: SectorPatch = parse_body(&body)?;
    let kind = CommandKind::SetSectorCapacity {
        sector_id: id.clone(),
        ue_capacity: req.ue_capacity,
        max_throughput: req.max_throughput_bps,
    };
    kind.validate()?;
    let snap = st.sim.snapshot();
    let sector = snap.network.sector(&id).map_err(|_| ApiError::not_found("sector", &id))?;
    if let Some(cap) = req.ue_capacity {
        if (cap as usize) < sector.attached_count() {
            return Err(ApiError::conflict(format!(
                "sector {id:?} has {} attached UEs; capacity {cap} would evict",
                sector.attached_count()
            )));
        }
    }
    Ok(accepted(submit_all(&st.sim, vec![kind])?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimAction {
    action: String,
    n: Option<u64>,
}

async fn post_sim(State(st): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: SimAction = parse_body(&body)?;
    let kind = match req.action.as_str() {
        "pause" => CommandKind::Pause,
        "resume" => CommandKind::Resume,
        "step" => CommandKind::StepN { n: req.n.unwrap_or(1) },
        other => {
            return Err(ApiError::bad_request(format!(
                "action must be pause, resume or step, got {other:?}"
            )))
        }
    };
    Ok(accepted(submit_all(&st.sim, vec![kind])?))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScenarioRequest {
    Document(Scenario),
    Builtin {
        name: String,
        #[serde(default)]
        mode: RampMode,
        sector_id: Option<String>,
    },
}

/// Either a full scenario document or `{"name": "rush_hour"}` with an
/// optional ramp `mode` and `sector_id`.
async fn post_scenario(State(st): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: ScenarioRequest = parse_body(&body)?;
    let scenario = match req {
        ScenarioRequest::Document(s) => {
            s.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
            s
        }
        ScenarioRequest::Builtin { name, mode, sector_id } => {
            if name != ransim_core::engine::RUSH_HOUR {
                return Err(ApiError::not_found("scenario", &name));
            }
            let sector = sector_id.unwrap_or_else(|| presets::RUSH_HOUR_SECTOR.to_string());
            st.sim
                .snapshot()
                .network
                .sector(&sector)
                .map_err(|_| ApiError::not_found("sector", &sector))?;
            // launched interactively, so the ramp starts right away
            Scenario::rush_hour(&sector, 0, presets::RUSH_HOUR_DURATION, mode)
        }
    };
    Ok(accepted(submit_all(&st.sim, vec![CommandKind::RunScenario { scenario }])?))
}

// ---------------------------------------------------------------- events

fn to_sse(ev: &StreamEvent) -> Event {
    Event::default()
        .id(ev.seq.to_string())
        .event(ev.payload.name())
        .json_data(&ev.payload)
        .unwrap_or_else(|e| Event::default().comment(format!("unserializable event: {e}")))
}

/// Server-sent events. Resume with the `Last-Event-ID` header or
/// `?since=<seq>`; `?types=handover,command,loads` filters.
async fn get_events(
    State(st): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let from_header = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .map(|v| v.trim().parse::<u64>())
        .transpose()
        .map_err(|_| ApiError::bad_request("Last-Event-ID must be a sequence number"))?;
    let since = match from_header {
        Some(s) => s,
        None => tick_param(&q, "since")?.unwrap_or_else(|| st.sim.hub().last_seq()),
    };
    let types: Option<Vec<String>> = q
        .get("types")
        .map(|t| t.split(',').map(|s| s.trim().to_string()).collect());

    let hub = st.sim.hub();
    let poll = st.config.poll_interval;
    let state = (since, VecDeque::<StreamEvent>::new());
    let events = stream::unfold(state, move |(mut last, mut buf)| {
        let hub = Arc::clone(&hub);
        let types = types.clone();
        async move {
            loop {
                if let Some(ev) = buf.pop_front() {
                    last = ev.seq;
                    if types.as_ref().is_some_and(|t| !t.iter().any(|n| n == ev.payload.name())) {
                        continue;
                    }
                    return Some((Ok(to_sse(&ev)), (last, buf)));
                }
                buf.extend(hub.since(last));
                if buf.is_empty() {
                    tokio::time::sleep(poll).await;
                }
            }
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::new().interval(st.config.heartbeat).text("heartbeat")))
}
