//! HTTP preview service.
//!
//! | route            | body                 | reply                                   |
//! |------------------|----------------------|-----------------------------------------|
//! | `GET /labels`    |                      | roster: ids, shapes, label counts       |
//! | `GET /config`    |                      | base configuration and slider schema    |
//! | `POST /preview`  | [`PreviewRequest`]   | base64 PNG slices and provenance        |
//! | `POST /validate` | sparse overrides     | merged configuration, or 422 and issues |
//!
//! Every reply is a pure function of the request and the loaded roster.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use labelsynth::config::{merge_overrides, slider_schema, table_ranges, EFFECT_STAGES};
use labelsynth::io::{slice_png, VolumeData};
use labelsynth::pipeline::{generate_with, GenerateOptions};
use labelsynth::stream::RosterEntry;
use labelsynth::{max_effect_config, qc_flags, ConfigError, Error, FieldIssue, Stage, SynthesisConfig};
use serde::Deserialize;
use serde_json::{json, Value};

pub const PORT_ENV: &str = "LABELSYNTH_PORT";
pub const ROSTER_ENV: &str = "LABELSYNTH_ROSTER";
pub const DEFAULT_PORT: u16 = 8350;

#[derive(Clone)]
pub struct AppState {
    roster: Arc<Vec<RosterEntry>>,
    config: Arc<SynthesisConfig>,
}

impl AppState {
    pub fn new(roster: Vec<RosterEntry>, config: SynthesisConfig) -> Self {
        Self {
            roster: Arc::new(roster),
            config: Arc::new(config),
        }
    }
}

/// Sparse request for one preview.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreviewRequest {
    /// Roster id; the first entry when omitted.
    pub label_map: Option<String>,
    /// Partial configuration merged onto the service defaults.
    pub overrides: Value,
    pub seed: u64,
    pub axis: usize,
    /// Slice index; the middle of the axis when omitted.
    pub index: Option<usize>,
    pub cutoff: Option<Stage>,
    /// Stage whose range is pinned to its upper bound.
    pub max_effect: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn issues(status: StatusCode, error: &str, issues: &[FieldIssue]) -> Self {
        Self {
            status,
            body: json!({ "error": error, "issues": issues }),
        }
    }

    fn field(field: &str, message: impl Into<String>) -> Self {
        Self::issues(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid request",
            &[FieldIssue::new(field, message)],
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        Self::issues(StatusCode::UNPROCESSABLE_ENTITY, "invalid configuration", &e.issues)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/labels", get(labels))
        .route("/config", get(config))
        .route("/preview", post(preview))
        .route("/validate", post(validate))
        .with_state(state)
}

async fn labels(State(st): State<AppState>) -> Json<Value> {
    let list: Vec<Value> = st
        .roster
        .iter()
        .map(|e| {
            json!({
                "id": e.id,
                "shape": e.labels.shape().extents(),
                "voxel_size": e.labels.grid().voxel_size(),
                "label_count": e.labels.label_count(),
            })
        })
        .collect();
    Json(json!({ "labels": list }))
}

async fn config(State(st): State<AppState>) -> Json<Value> {
    let table: Vec<Value> = table_ranges(&st.config)
        .into_iter()
        .map(|(name, a, b)| json!({ "name": name, "range": [a, b] }))
        .collect();
    Json(json!({
        "config": *st.config,
        "schema": slider_schema(&st.config),
        "table": table,
        "stages": Stage::ALL.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "max_effect_stages": EFFECT_STAGES,
    }))
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        let status = if e.is_data() {
            StatusCode::UNPROCESSABLE_ENTITY
        } else {
            StatusCode::BAD_REQUEST
        };
        ApiError::issues(status, "invalid request body", &[FieldIssue::new("body", e.to_string())])
    })
}

fn overrides_of(v: Value) -> Value {
    if v.is_null() {
        json!({})
    } else {
        v
    }
}

async fn validate(State(st): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let overrides = overrides_of(parse_json::<Value>(&body)?);
    if !overrides.is_object() {
        return Err(ApiError::field("body", "overrides must be a JSON object"));
    }
    let cfg = merge_overrides(&st.config, &overrides).map_err(|e| {
        let mut err = ApiError::from(e);
        err.body["valid"] = json!(false);
        err
    })?;
    Ok(Json(json!({ "valid": true, "config": cfg })))
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

/// Render one preview. Blocking; call off the async executor.
pub fn render_preview(st: &AppState, req: PreviewRequest) -> Result<Value, ApiError> {
    let entry = match &req.label_map {
        Some(id) => st.roster.iter().find(|e| &e.id == id).ok_or_else(|| ApiError {
            status: StatusCode::NOT_FOUND,
            body: json!({ "error": format!("unknown label map `{id}`") }),
        })?,
        None => st.roster.first().ok_or_else(|| ApiError {
            status: StatusCode::NOT_FOUND,
            body: json!({ "error": "no label maps are loaded" }),
        })?,
    };
    let overrides = overrides_of(req.overrides);
    if !overrides.is_object() {
        return Err(ApiError::field("overrides", "must be a JSON object"));
    }
    let mut cfg = merge_overrides(&st.config, &overrides)?;
    if let Some(stage) = &req.max_effect {
        cfg = max_effect_config(&cfg, stage).map_err(|_| {
            ApiError::field(
                "max_effect",
                format!("unknown stage `{stage}`; expected one of {}", EFFECT_STAGES.join(", ")),
            )
        })?;
    }
    let shape = entry.labels.shape();
    let (axis, index) = if shape.ndim() == 2 {
        (0, 0)
    } else {
        if req.axis >= 3 {
            return Err(ApiError::field("axis", format!("axis {} does not exist in a 3-D volume", req.axis)));
        }
        let extent = shape.extent(req.axis);
        let index = req.index.unwrap_or(extent / 2);
        if index >= extent {
            return Err(ApiError::field("index", format!("slice {index} is outside an axis of extent {extent}")));
        }
        (req.axis, index)
    };
    let opts = GenerateOptions {
        cutoff: req.cutoff.unwrap_or(Stage::last()),
        label_map: Some(entry.id.clone()),
    };
    let pair = generate_with(&entry.labels, &cfg, req.seed, &opts).map_err(generation_error)?;
    let image = slice_png(VolumeData::Image(&pair.image), axis, index).map_err(generation_error)?;
    let labels = slice_png(VolumeData::Labels(&pair.labels), axis, index).map_err(generation_error)?;
    Ok(json!({
        "label_map": entry.id,
        "seed": req.seed,
        "axis": axis,
        "index": index,
        "cutoff": opts.cutoff,
        "shape": pair.image.shape().extents(),
        "image_png": b64(&image),
        "labels_png": b64(&labels),
        "qc": qc_flags(&pair).iter().map(|f| f.name()).collect::<Vec<_>>(),
        "provenance": pair.provenance,
    }))
}

fn generation_error(e: Error) -> ApiError {
    if let Error::Config(c) = e.root() {
        return ApiError::from(c.clone());
    }
    log::warn!("preview failed: {e}");
    let stage = match &e {
        Error::Stage { stage, .. } => Some(*stage),
        _ => None,
    };
    ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        body: json!({ "error": "sample generation failed", "stage": stage, "reason": e.root().to_string() }),
    }
}

async fn preview(State(st): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: PreviewRequest = parse_json(&body)?;
    tokio::task::spawn_blocking(move || render_preview(&st, req))
        .await
        .map_err(|_| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: json!({ "error": "sample generation failed" }),
        })?
        .map(Json)
}

fn is_volume(p: &Path) -> bool {
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    [".nii", ".nii.gz", ".raw", ".raw.gz"].iter().any(|e| name.ends_with(e))
}

/// Roster id: the file name without its volume extension.
pub fn roster_id(p: &Path) -> String {
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    [".nii.gz", ".raw.gz", ".nii", ".raw"]
        .iter()
        .find_map(|e| name.strip_suffix(e))
        .unwrap_or(name)
        .to_string()
}

/// Label maps in `dir`, sorted by name.
pub fn scan_roster(dir: &Path) -> labelsynth::Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_volume(p))
        .collect();
    paths.sort();
    Ok(paths)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    println!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
