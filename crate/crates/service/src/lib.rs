//! HTTP task server for the two annotation stages.
//!
//! Tasks are loaded from a data directory (`grids.jsonl`,
//! `classify_tasks.jsonl`). Responses are appended to
//! `responses_<stage>.jsonl` and never rewritten; QC and aggregation run
//! as batch steps over those logs.
//!
//! | method | path | body / query |
//! |---|---|---|
//! | GET | `/v1/tasks/next` | `?worker=&stage=` |
//! | POST | `/v1/responses` | `{"stage", "response"}` |
//! | GET | `/v1/progress` | |
//! | POST | `/v1/aggregate` | |
//! | GET | `/v1/annotations/{image}` | |
//! | GET | `/v1/export/{kind}` | `?stage=` for `responses` and `qc` |

mod state;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crowdlabel::classify::{aggregate_all, apply_classify_qc, ClassifyResponse, ClassifyTask, ImageAnnotation};
use crowdlabel::contains::{apply_contains_qc, GridResponse, GridTask};
use crowdlabel::ingest::{ClassTable, DatasetIndex};
use crowdlabel::io::{read_jsonl, sha256_hex, to_jsonl, write_bytes};
use crowdlabel::layout::Layout;
use crowdlabel::{ClassId, PipelineConfig};

pub use state::{Stage, StageProgress, StageState};
use state::Aggregated;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Duplicate(String),
    #[error("{0}")]
    Internal(String),
    #[error(transparent)]
    Core(#[from] crowdlabel::Error),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Duplicate(_) => StatusCode::CONFLICT,
            ServiceError::Internal(_) | ServiceError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Responses wanted per task.
    pub target: usize,
    pub lease_timeout: Duration,
    pub pipeline: PipelineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        ServiceConfig { target: pipeline.annotators, lease_timeout: Duration::from_secs(900), pipeline }
    }
}

/// Label descriptions and image URLs attached to task payloads when the
/// class table and dataset are present.
struct Describe {
    classes: ClassTable,
    index: DatasetIndex,
}

impl Describe {
    fn enrich(&self, mut task: Value) -> Value {
        let mut labels: Vec<u64> = Vec::new();
        if let Some(q) = task.get("query_label").and_then(Value::as_u64) {
            labels.push(q);
        }
        if let Some(c) = task.get("candidates").and_then(Value::as_array) {
            labels.extend(c.iter().filter_map(Value::as_u64));
        }
        let described: Vec<Value> = labels
            .into_iter()
            .filter_map(|l| {
                let e = self.classes.get(ClassId(l as u32))?;
                Some(json!({ "id": l, "wnid": e.wnid, "names": e.names, "wiki_url": e.wiki_url }))
            })
            .collect();
        let mut images: Vec<&str> = Vec::new();
        if let Some(i) = task.get("image").and_then(Value::as_str) {
            images.push(i);
        }
        if let Some(s) = task.get("shown").and_then(Value::as_array) {
            images.extend(s.iter().filter_map(Value::as_str));
        }
        let urls: BTreeMap<&str, &str> = images
            .into_iter()
            .filter_map(|i| Some((i, self.index.record(i)?.url.as_deref()?)))
            .collect();
        let urls = serde_json::to_value(urls).expect("serializable");
        if let Value::Object(o) = &mut task {
            o.insert("labels".into(), Value::Array(described));
            o.insert("image_urls".into(), urls);
        }
        task
    }
}

struct Inner {
    contains: Option<StageState>,
    classify: Option<StageState>,
    grids: Vec<GridTask>,
    classify_tasks: Vec<ClassifyTask>,
    aggregated: Option<Aggregated>,
}

pub struct Service {
    layout: Layout,
    cfg: ServiceConfig,
    describe: Option<Describe>,
    inner: Mutex<Inner>,
}

impl Service {
    /// Opens whichever stages have task files in the data directory.
    pub fn open(layout: Layout, cfg: ServiceConfig) -> Result<Self, ServiceError> {
        let mut grids = Vec::new();
        let contains = if layout.grids().exists() {
            grids = read_jsonl(layout.grids())?;
            Some(StageState::contains(grids.clone(), cfg.target, layout.responses_contains())?)
        } else {
            None
        };
        let mut classify_tasks = Vec::new();
        let classify = if layout.classify_tasks().exists() {
            classify_tasks = read_jsonl(layout.classify_tasks())?;
            Some(StageState::classify(classify_tasks.clone(), cfg.target, layout.responses_classify())?)
        } else {
            None
        };
        let describe = if layout.classes().exists() && layout.dataset().exists() {
            let classes = layout.load_classes()?;
            let index = layout.load_index(classes.len())?;
            Some(Describe { classes, index })
        } else {
            None
        };
        Ok(Service {
            layout,
            cfg,
            describe,
            inner: Mutex::new(Inner { contains, classify, grids, classify_tasks, aggregated: None }),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn next_task(&self, worker: &str, stage: Stage) -> Result<Option<Value>, ServiceError> {
        let mut inner = self.lock();
        let task = stage_mut(&mut inner, stage)?.next_task(worker, Instant::now(), self.cfg.lease_timeout);
        Ok(match (&self.describe, task) {
            (Some(d), Some(t)) => Some(d.enrich(t)),
            (_, t) => t,
        })
    }

    pub fn submit(&self, stage: Stage, response: Value) -> Result<(), ServiceError> {
        let mut inner = self.lock();
        stage_mut(&mut inner, stage)?.submit(response, Instant::now(), self.cfg.lease_timeout)
    }

    pub fn progress(&self) -> BTreeMap<Stage, StageProgress> {
        let inner = self.lock();
        let now = Instant::now();
        [(Stage::Contains, &inner.contains), (Stage::Classify, &inner.classify)]
            .into_iter()
            .filter_map(|(s, st)| Some((s, st.as_ref()?.progress(now, self.cfg.lease_timeout))))
            .collect()
    }

    /// Classify QC and aggregation over the current log; writes
    /// `qc_classify.json` and `annotations.jsonl`.
    pub fn aggregate(&self) -> Result<usize, ServiceError> {
        let mut inner = self.lock();
        let log = stage_mut(&mut inner, Stage::Classify)?.log_text();
        let responses: Vec<ClassifyResponse> = parse_lines(&log)?;
        let classes = self.layout.load_classes()?;
        let index = self.layout.load_index(classes.len())?;
        let auto: Vec<ImageAnnotation> = if self.layout.auto_annotations().exists() {
            read_jsonl(self.layout.auto_annotations())?
        } else {
            Vec::new()
        };
        let (retained, report) = apply_classify_qc(&inner.classify_tasks, &responses, &self.cfg.pipeline.classify_qc())?;
        let annotations = aggregate_all(&inner.classify_tasks, &retained, &auto, &index)?;
        let jsonl = to_jsonl(&annotations)?;
        let qc = format!("{}\n", serde_json::to_string_pretty(&report).expect("serializable"));
        write_bytes(self.layout.annotations(), jsonl.as_bytes())?;
        write_bytes(self.layout.qc_classify(), qc.as_bytes())?;
        let n = annotations.len();
        inner.aggregated = Some(Aggregated {
            annotations: annotations.into_iter().map(|a| (a.image.clone(), a)).collect(),
            jsonl,
            qc,
        });
        Ok(n)
    }

    pub fn annotation(&self, image: &str) -> Result<ImageAnnotation, ServiceError> {
        let inner = self.lock();
        let agg = inner.aggregated.as_ref().ok_or_else(not_aggregated)?;
        agg.annotations
            .get(image)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("no annotation for image {image:?}")))
    }

    /// Export body for `kind`; identical state gives identical bytes.
    pub fn export(&self, kind: &str, stage: Option<Stage>) -> Result<String, ServiceError> {
        let mut inner = self.lock();
        match kind {
            "responses" => Ok(stage_mut(&mut inner, stage.unwrap_or(Stage::Classify))?.log_text()),
            "annotations" => Ok(inner.aggregated.as_ref().ok_or_else(not_aggregated)?.jsonl.clone()),
            "qc" => match stage.unwrap_or(Stage::Classify) {
                Stage::Classify => Ok(inner.aggregated.as_ref().ok_or_else(not_aggregated)?.qc.clone()),
                Stage::Contains => {
                    let log = stage_mut(&mut inner, Stage::Contains)?.log_text();
                    let responses: Vec<GridResponse> = parse_lines(&log)?;
                    let (_, report) = apply_contains_qc(&inner.grids, &responses, &self.cfg.pipeline.contains_qc())?;
                    Ok(format!("{}\n", serde_json::to_string_pretty(&report).expect("serializable")))
                }
            },
            "metrics" => std::fs::read_to_string(self.layout.metrics())
                .map_err(|_| ServiceError::NotFound("metrics not yet computed".into())),
            other => Err(ServiceError::NotFound(format!("unknown export kind {other:?}"))),
        }
    }
}

fn not_aggregated() -> ServiceError {
    ServiceError::NotFound("not yet aggregated".into())
}

fn stage_mut(inner: &mut Inner, stage: Stage) -> Result<&mut StageState, ServiceError> {
    match stage {
        Stage::Contains => inner.contains.as_mut(),
        Stage::Classify => inner.classify.as_mut(),
    }
    .ok_or_else(|| ServiceError::NotFound(format!("stage {stage:?} has no tasks loaded")))
}

fn parse_lines<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>, ServiceError> {
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| ServiceError::Internal(format!("corrupt log line: {e}"))))
        .collect()
}

#[derive(Deserialize)]
struct NextQuery {
    worker: String,
    stage: String,
}

#[derive(Serialize)]
struct NextReply {
    stage: Stage,
    task: Option<Value>,
}

#[derive(Deserialize)]
struct Submission {
    stage: String,
    response: Value,
}

#[derive(Deserialize)]
struct ExportQuery {
    stage: Option<String>,
}

async fn next_task(State(s): State<Arc<Service>>, Query(q): Query<NextQuery>) -> Result<Json<NextReply>, ServiceError> {
    let stage = Stage::parse(&q.stage)?;
    let task = s.next_task(&q.worker, stage)?;
    Ok(Json(NextReply { stage, task }))
}

async fn submit(State(s): State<Arc<Service>>, body: Result<Json<Submission>, axum::extract::rejection::JsonRejection>) -> Result<impl IntoResponse, ServiceError> {
    let Json(sub) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    s.submit(Stage::parse(&sub.stage)?, sub.response)?;
    Ok((StatusCode::CREATED, Json(json!({ "ok": true }))))
}

async fn progress(State(s): State<Arc<Service>>) -> Json<BTreeMap<Stage, StageProgress>> {
    Json(s.progress())
}

async fn aggregate(State(s): State<Arc<Service>>) -> Result<Json<Value>, ServiceError> {
    let n = s.aggregate()?;
    Ok(Json(json!({ "annotations": n })))
}

async fn annotation(State(s): State<Arc<Service>>, Path(image): Path<String>) -> Result<Json<ImageAnnotation>, ServiceError> {
    Ok(Json(s.annotation(&image)?))
}

async fn export(State(s): State<Arc<Service>>, Path(kind): Path<String>, Query(q): Query<ExportQuery>) -> Result<Response, ServiceError> {
    let stage = q.stage.as_deref().map(Stage::parse).transpose()?;
    let body = s.export(&kind, stage)?;
    let hash = HeaderValue::from_str(&sha256_hex(body.as_bytes())).expect("hex is a valid header");
    let mut resp = body.into_response();
    resp.headers_mut().insert("x-content-hash", hash);
    resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"));
    Ok(resp)
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/tasks/next", get(next_task))
        .route("/v1/responses", post(submit))
        .route("/v1/progress", get(progress))
        .route("/v1/aggregate", post(aggregate))
        .route("/v1/annotations/{image}", get(annotation))
        .route("/v1/export/{kind}", get(export))
        .with_state(service)
}

pub async fn serve(service: Arc<Service>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}
