use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use dempref::dynamics::DOMAINS;
use dempref::Driver;

use crate::api::{self, CreateSession, DomainInfo, SessionCreated, SubmitDemonstration, SubmitRanking, VERSION};
use crate::error::ServiceError;
use crate::store::{SessionStore, Status};

/// Seconds a client should wait before polling a computing session again.
pub const RETRY_AFTER_SECS: u64 = 1;

type Store = Arc<SessionStore>;

pub fn router(store: Store) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/demonstrations", post(submit_demonstration))
        .route("/sessions/{id}/query", get(current_query))
        .route("/sessions/{id}/ranking", post(submit_ranking))
        .route("/sessions/{id}/belief", get(belief))
        .route("/domains/{name}", get(domain))
        .with_state(store)
}

/// Runs the session's pending computation on the blocking pool.
pub fn spawn_compute(store: &Store, id: String) {
    let store = Arc::clone(store);
    tokio::task::spawn_blocking(move || {
        let _ = store.compute(&id);
    });
}

/// Resumes interrupted sessions and serves until the listener fails.
pub async fn serve(store: Store, addr: SocketAddr) -> std::io::Result<()> {
    for id in store.unfinished() {
        log::info!("resuming session {id}");
        spawn_compute(&store, id);
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}

/// Blocking wrapper around [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(store: Store, addr: SocketAddr) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(store, addr))
}

async fn create_session(State(store): State<Store>, body: Bytes) -> Result<Response, ServiceError> {
    let req: CreateSession = api::parse_body(&body)?;
    let (id, status) = store.create(&req)?;
    if status == Status::Computing {
        spawn_compute(&store, id.clone());
    }
    let body = SessionCreated { v: VERSION, id, status };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn submit_demonstration(
    State(store): State<Store>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let req: SubmitDemonstration = api::parse_body(&body)?;
    api::check_version(req.v)?;
    let accepted = store.submit_demonstration(&id, &req.controls)?;
    if accepted.status == Status::Computing {
        spawn_compute(&store, id);
    }
    Ok(Json(accepted).into_response())
}

async fn current_query(State(store): State<Store>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let state = store.query(&id)?;
    if state.status == Status::Computing {
        let headers = [(header::RETRY_AFTER, RETRY_AFTER_SECS.to_string())];
        return Ok((StatusCode::ACCEPTED, headers, Json(state)).into_response());
    }
    Ok(Json(state).into_response())
}

async fn submit_ranking(
    State(store): State<Store>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let req: SubmitRanking = api::parse_body(&body)?;
    let accepted = store.submit_ranking(&id, &req)?;
    spawn_compute(&store, id);
    Ok(Json(accepted).into_response())
}

async fn belief(State(store): State<Store>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(store.belief(&id)?).into_response())
}

async fn session_summary(State(store): State<Store>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(store.summary(&id)?).into_response())
}

async fn domain(Path(name): Path<String>) -> Result<Response, ServiceError> {
    if name != "driver" {
        return Err(ServiceError::NotFound(format!(
            "domain {name:?}; valid domains: {}",
            DOMAINS.join(", ")
        )));
    }
    Ok(Json(domain_info()).into_response())
}

/// Driver constants a client needs to replay rollouts locally.
pub fn domain_info() -> DomainInfo {
    let driver = Driver::<f64>::new();
    DomainInfo {
        v: VERSION,
        spec: dempref::System::spec(&driver).clone(),
        params: driver.params().clone(),
        scaling: driver.scaling().clone(),
        feature_names: Driver::<f64>::FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
    }
}
