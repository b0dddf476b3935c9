use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;
use tokio_stream::wrappers::BroadcastStream;
use tower_http::services::ServeDir;

use super::{SessionStatus, Shared};
use crate::frame::scan_frm0;
use crate::sampler::SamplerConfig;

pub const MJPEG_BOUNDARY: &str = "frame";

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

pub fn router(shared: Arc<Shared>) -> Router {
    let limit = shared.config.max_upload_bytes;
    let console = shared.config.console_dir.clone();
    let app = Router::new()
        .route("/api/status", get(status))
        .route("/api/metrics", get(metrics))
        .route("/api/config/sampling", put(set_sampling))
        .route("/stream/live.mjpg", get(live_mjpeg))
        .route("/api/detections/stream", get(detection_events))
        .route("/api/jobs/video", post(post_job))
        .route("/api/jobs/{id}", get(get_job))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(shared);
    match console {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

async fn status(State(sh): State<Arc<Shared>>) -> Json<serde_json::Value> {
    let (session, key) = match sh.session() {
        SessionStatus::Idle => ("idle", None),
        SessionStatus::Publishing { stream_key } => ("publishing", Some(stream_key)),
    };
    Json(json!({
        "session": session,
        "stream_key": key,
        "uptime_seconds": sh.uptime().as_secs_f64(),
        "dc": sh.mailbox.latest(),
        "effective_dc": sh.metrics.dc(),
        "sampler_mode": sh.config.sampler_mode,
        "detector_health": sh.detector_health(),
        "counters": sh.metrics.counters(),
        "last_session": sh.last_live_report().map(|r| json!({
            "total_frames": r.total_frames,
            "tvfa": r.tvfa,
            "runtime_seconds": r.runtime_seconds,
        })),
    }))
}

async fn metrics(State(sh): State<Arc<Shared>>) -> impl IntoResponse {
    Json(sh.metrics.snapshot(sh.clock.now()))
}

#[derive(Deserialize)]
struct SamplingBody {
    dc: f64,
}

async fn set_sampling(State(sh): State<Arc<Shared>>, body: Bytes) -> Response {
    let body: SamplingBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("bad body: {e}")),
    };
    match sh.set_dc(body.dc) {
        Ok(dc) => Json(json!({ "dc": dc })).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

fn mjpeg_part(jpeg: &[u8]) -> Bytes {
    let mut out = format!(
        "--{MJPEG_BOUNDARY}\r\nContent-Type: image/jpeg\r\nContent-Length: {}\r\n\r\n",
        jpeg.len()
    )
    .into_bytes();
    out.extend_from_slice(jpeg);
    out.extend_from_slice(b"\r\n");
    Bytes::from(out)
}

/// Stream that ends when the gateway shuts down.
fn until_shutdown<S: Stream + Send + 'static>(sh: &Shared, s: S) -> impl Stream<Item = S::Item> + Send {
    let mut down = sh.shutting_down();
    s.take_until(async move {
        let _ = down.wait_for(|v| *v).await;
    })
}

async fn live_mjpeg(State(sh): State<Arc<Shared>>) -> Response {
    let rx = sh.preview_tx.subscribe();
    let parts = futures::stream::unfold((rx, sh.clone(), true), |(mut rx, sh, first)| async move {
        if first && !sh.is_publishing() {
            return Some((mjpeg_part(&sh.placeholder), (rx, sh, false)));
        }
        loop {
            match tokio::time::timeout(Duration::from_secs(1), rx.recv()).await {
                Ok(Ok(jpeg)) => return Some((mjpeg_part(&jpeg), (rx, sh, false))),
                Ok(Err(RecvError::Lagged(_))) => continue,
                Ok(Err(RecvError::Closed)) => return None,
                Err(_) if !sh.is_publishing() => return Some((mjpeg_part(&sh.placeholder), (rx, sh, false))),
                Err(_) => continue,
            }
        }
    });
    let body = Body::from_stream(until_shutdown(&sh, parts.map(Ok::<_, Infallible>)));
    (
        [
            (header::CONTENT_TYPE, format!("multipart/x-mixed-replace; boundary={MJPEG_BOUNDARY}")),
            (header::CACHE_CONTROL, "no-cache".to_string()),
        ],
        body,
    )
        .into_response()
}

async fn detection_events(State(sh): State<Arc<Shared>>) -> impl IntoResponse {
    let events = BroadcastStream::new(sh.events_tx.subscribe()).filter_map(|r| async move {
        // a lagging client skips what it missed; there is no replay
        let e = r.ok()?;
        Some(Ok::<_, Infallible>(Event::default().json_data(&e).expect("event serializes")))
    });
    let keepalive = Duration::from_secs_f64(sh.config.sse_keepalive_seconds);
    Sse::new(until_shutdown(&sh, events)).keep_alive(KeepAlive::new().interval(keepalive).text("heartbeat"))
}

async fn post_job(State(sh): State<Arc<Shared>>, mut mp: Multipart) -> Response {
    let mut file: Option<Bytes> = None;
    let mut dc: Option<String> = None;
    loop {
        match mp.next_field().await {
            Ok(Some(field)) => match field.name() {
                Some("file") => match field.bytes().await {
                    Ok(b) => file = Some(b),
                    Err(e) => return error(StatusCode::BAD_REQUEST, format!("bad upload: {e}")),
                },
                Some("dc") => match field.text().await {
                    Ok(t) => dc = Some(t),
                    Err(e) => return error(StatusCode::BAD_REQUEST, format!("bad dc field: {e}")),
                },
                _ => {}
            },
            Ok(None) => break,
            Err(e) => return error(StatusCode::BAD_REQUEST, format!("bad multipart body: {e}")),
        }
    }
    let Some(file) = file else {
        return error(StatusCode::BAD_REQUEST, "missing file field");
    };
    let dc = match dc.as_deref().map(str::trim) {
        None | Some("") => sh.config.dc_default,
        Some(s) => match s.parse::<f64>() {
            Ok(v) => v,
            Err(_) => return error(StatusCode::BAD_REQUEST, format!("bad dc {s:?}")),
        },
    };
    if let Err(e) = SamplerConfig::new(dc, crate::sampler::SamplerMode::OfflineBlocking) {
        return error(StatusCode::BAD_REQUEST, e.to_string());
    }
    // an empty upload is accepted and fails as a source error when run
    if !file.is_empty() {
        if let Err(e) = scan_frm0(&file) {
            return error(StatusCode::BAD_REQUEST, format!("not a .frm0 stream: {e}"));
        }
    }
    let sh2 = sh.clone();
    match tokio::task::spawn_blocking(move || sh2.enqueue_job(&file, dc)).await {
        Ok(Ok(rec)) => (StatusCode::ACCEPTED, Json(rec)).into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("cannot store upload: {e}")),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn get_job(State(sh): State<Arc<Shared>>, Path(id): Path<String>) -> Response {
    match sh.job(&id) {
        Some(j) => Json(j).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no job {id}")),
    }
}
