//! `/api/v1` over the same operations as the command line.
//!
//! Reads load the last persisted state without taking the writer lock.
//! Mutations queue on an in-process mutex and then take the project's
//! writer lock, so a concurrent CLI writer gets `LOCKED` rather than a
//! lost update.

use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use converge_core::critique::{AssessmentInput, Decision, NewFinding, Severity};
use converge_core::gates::Divergence;
use converge_core::metrics::AdoptionInput;
use converge_core::prompts::PromptKind;
use converge_core::store::{GateSubmission, Project};
use converge_core::{Error, ErrorClass, PhaseId};
use serde::Deserialize;
use serde_json::Value;

use crate::envelope::ApiEnvelope;
use crate::ops::{self, Op};

pub const TOKEN_HEADER: &str = "x-converge-token";
/// Names the operation that served the request.
pub const OP_HEADER: &str = "x-converge-op";

/// Every route under `/api/v1`, as (method, path template).
pub const ENDPOINTS: &[(&str, &str)] = &[
    ("GET", "/project"),
    ("GET", "/status"),
    ("GET", "/lenses"),
    ("PUT", "/lenses/:lens_id/rationale"),
    ("PUT", "/context/:flag"),
    ("GET", "/score"),
    ("POST", "/score"),
    ("POST", "/discovery/teachbacks"),
    ("GET", "/discovery/hsa"),
    ("POST", "/discovery/hsa/:level/converge"),
    ("PUT", "/discovery/hsa/:level/notes"),
    ("POST", "/discovery/hsa/retroactions"),
    ("GET", "/architecture/versions"),
    ("POST", "/architecture/versions"),
    ("GET", "/convergence"),
    ("GET", "/matrix"),
    ("GET", "/matrix/check"),
    ("POST", "/matrix/cells"),
    ("POST", "/matrix/decisions"),
    ("GET", "/findings"),
    ("POST", "/findings"),
    ("POST", "/findings/:id/triage"),
    ("POST", "/findings/:id/resolve"),
    ("GET", "/gates/:gate_id"),
    ("POST", "/gates/:gate_id"),
    ("POST", "/transitions"),
    ("GET", "/artifacts"),
    ("POST", "/artifacts"),
    ("GET", "/artifacts/verify"),
    ("POST", "/microchecks"),
    ("POST", "/checklist"),
    ("GET", "/scope"),
    ("POST", "/metrics/efficiency"),
    ("POST", "/metrics/adoption"),
    ("GET", "/prompts/:phase/:kind"),
];

#[derive(Clone)]
pub struct AppState {
    root: Arc<PathBuf>,
    writer: Arc<tokio::sync::Mutex<()>>,
    token: Option<Arc<str>>,
}

enum Fail {
    Core(Error),
    BadRequest(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

impl From<JsonRejection> for Fail {
    fn from(e: JsonRejection) -> Self {
        Fail::BadRequest(e.body_text())
    }
}

impl From<QueryRejection> for Fail {
    fn from(e: QueryRejection) -> Self {
        Fail::BadRequest(e.body_text())
    }
}

pub fn http_status(e: &Error) -> StatusCode {
    if matches!(e, Error::Locked(_)) {
        return StatusCode::CONFLICT;
    }
    match e.class() {
        ErrorClass::Invalid => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorClass::Conflict => StatusCode::CONFLICT,
        ErrorClass::NotFound => StatusCode::NOT_FOUND,
        ErrorClass::Integrity => StatusCode::INTERNAL_SERVER_ERROR,
        ErrorClass::Operational => StatusCode::SERVICE_UNAVAILABLE,
    }
}

fn envelope(status: StatusCode, env: ApiEnvelope, op: Option<&'static str>) -> Response {
    let mut resp = (status, Json(env)).into_response();
    if let Some(op) = op {
        resp.headers_mut().insert(OP_HEADER, HeaderValue::from_static(op));
    }
    resp
}

fn fail_response(f: Fail, op: Option<&'static str>) -> Response {
    match f {
        Fail::Core(e) => envelope(http_status(&e), ApiEnvelope::from_error(&e), op),
        Fail::BadRequest(m) => envelope(StatusCode::BAD_REQUEST, ApiEnvelope::err("BAD_REQUEST", m, Value::Null), op),
    }
}

async fn dispatch(st: AppState, op: Result<Op, Fail>) -> Response {
    let op = match op {
        Ok(op) => op,
        Err(f) => return fail_response(f, None),
    };
    let name = op.name();
    let _guard = if op.mutates() { Some(st.writer.lock().await) } else { None };
    let root = st.root.clone();
    let res = tokio::task::spawn_blocking(move || ops::execute(&root, op)).await;
    match res {
        Ok(Ok(reply)) => envelope(StatusCode::OK, ApiEnvelope::ok(reply.data), Some(name)),
        Ok(Err(e)) => fail_response(Fail::Core(e), Some(name)),
        Err(join) => envelope(
            StatusCode::INTERNAL_SERVER_ERROR,
            ApiEnvelope::err("INTERNAL", join.to_string(), Value::Null),
            Some(name),
        ),
    }
}

// ---- request bodies

#[derive(Deserialize)]
struct ContextBody {
    value: bool,
    #[serde(default)]
    rationale: Option<String>,
}

#[derive(Deserialize)]
struct RationaleBody {
    rationale: String,
}

#[derive(Deserialize)]
struct ScoreBody {
    #[serde(default)]
    awards: Option<Vec<u32>>,
    #[serde(default)]
    criterion_id: Option<u8>,
    #[serde(default)]
    points: Option<u32>,
    #[serde(default)]
    confirmed: Option<bool>,
}

#[derive(Deserialize)]
struct TeachbackBody {
    collection_notes: String,
    synthesis: String,
    #[serde(default)]
    correction: Option<String>,
}

#[derive(Deserialize)]
struct NotesBody {
    notes: String,
}

#[derive(Deserialize)]
struct RetroactBody {
    from_level: u8,
    to_level: u8,
    reason: String,
}

#[derive(Deserialize)]
struct PathBody {
    path: PathBuf,
}

#[derive(Deserialize)]
struct CellBody {
    module: String,
    lens: String,
    /// `explicit_none` or `findings`.
    outcome: String,
    #[serde(default)]
    findings: Vec<NewFinding>,
}

#[derive(Deserialize)]
struct FindingBody {
    module: String,
    lens: String,
    severity: Severity,
    description: String,
}

#[derive(Deserialize)]
struct TriageBody {
    decision: String,
    #[serde(default)]
    rationale: Option<String>,
}

#[derive(Deserialize)]
struct ResolveBody {
    note: String,
}

#[derive(Deserialize)]
struct DecideBody {
    flag: String,
    decision: String,
}

#[derive(Deserialize)]
struct TransitionBody {
    to_phase: u8,
    #[serde(default)]
    gate_ref: Option<String>,
}

#[derive(Deserialize)]
struct ArtifactBody {
    phase: u8,
    version: u32,
    path: PathBuf,
}

#[derive(Deserialize)]
struct MicroCheckBody {
    module: String,
    response: String,
    #[serde(default)]
    divergences: Vec<Divergence>,
}

#[derive(Deserialize)]
struct ChecklistBody {
    requirement_id: String,
    #[serde(default)]
    note: String,
}

#[derive(Deserialize)]
struct EfficiencyBody {
    relevant_tokens: u64,
    total_tokens: u64,
}

#[derive(Deserialize)]
struct SeverityQuery {
    #[serde(default)]
    min_severity: Option<Severity>,
}

#[derive(Deserialize)]
struct OpenQuery {
    #[serde(default)]
    open: bool,
}

#[derive(Deserialize)]
struct PhaseQuery {
    phase: u8,
}

#[derive(Deserialize)]
struct TargetQuery {
    #[serde(default)]
    target: Option<String>,
}

type Body<T> = Result<Json<T>, JsonRejection>;
type Q<T> = Result<Query<T>, QueryRejection>;

fn phase(n: u8) -> Result<PhaseId, Fail> {
    Ok(PhaseId::new(n)?)
}

// ---- handlers

async fn project(State(st): State<AppState>) -> Response {
    dispatch(st, Ok(Op::Show)).await
}

async fn status(State(st): State<AppState>) -> Response {
    dispatch(st, Ok(Op::Status)).await
}

async fn lenses(State(st): State<AppState>) -> Response {
    dispatch(st, Ok(Op::LensList { active_only: false })).await
}

async fn set_context(State(st): State<AppState>, Path(flag): Path<String>, body: Body<ContextBody>) -> Response {
    let op = (|| {
        let Json(b) = body?;
        Ok(Op::SetContext { flag: flag.parse()?, value: b.value, rationale: b.rationale })
    })();
    dispatch(st, op).await
}

async fn lens_rationale(State(st): State<AppState>, Path(id): Path<String>, body: Body<RationaleBody>) -> Response {
    let op = body.map_err(Fail::from).map(|Json(b)| Op::LensRationale { lens_id: id, rationale: b.rationale });
    dispatch(st, op).await
}

async fn score_show(State(st): State<AppState>) -> Response {
    dispatch(st, Ok(Op::ScoreShow)).await
}

async fn score_set(State(st): State<AppState>, body: Body<ScoreBody>) -> Response {
    let op = (|| {
        let Json(b) = body?;
        let mut awards = Vec::new();
        if let Some(all) = b.awards {
            if all.len() != 10 {
                return Err(Error::WrongArity(all.len()).into());
            }
            awards.extend(all.into_iter().enumerate().map(|(i, a)| (i as u8 + 1, a)));
        }
        match (b.criterion_id, b.points) {
            (Some(c), Some(p)) => awards.push((c, p)),
            (None, None) => {}
            _ => return Err(Fail::BadRequest("criterion_id and points go together".into())),
        }
        Ok(Op::Score { awards, confirmed: b.confirmed })
    })();
    dispatch(st, op).await
}

async fn teachback(State(st): State<AppState>, body: Body<TeachbackBody>) -> Response {
    let op = body.map_err(Fail::from).map(|Json(b)| Op::Teachback {
        collection_notes: b.collection_notes,
        synthesis: b.synthesis,
        correction: b.correction,
    });
    dispatch(st, op).await
}

async fn hsa_show(State(st): State<AppState>) -> Response {
    dispatch(st, Ok(Op::HsaShow)).await
}

async fn hsa_converge(State(st): State<AppState>, Path(level): Path<u8>) -> Response {
    dispatch(st, Ok(Op::HsaConverge { level })).await
}

async fn hsa_notes(State(st): State<AppState>, Path(level): Path<u8>, body: Body<NotesBody>) -> Response {
    let op = body.map_err(Fail::from).map(|Json(b)| Op::HsaNotes { level, notes: b.notes });
    dispatch(st, op).await
}

async fn hsa_retroact(State(st): State<AppState>, body: Body<RetroactBody>) -> Response {
    let op = body.map_err(Fail::from).map(|Json(b)| Op::HsaRetroact {
        from_level: b.from_level,
        to_level: b.to_level,
        reason: b.reason,
    });
    dispatch(st, op).await
}

async fn arch_list(State(st): State<AppState>) -> Response {
    dispatch(st, Ok(Op::ArchList)).await
}

/// Relative paths are taken from the project root.
async fn arch_register(State(st): State<AppState>, body: Body<PathBody>) -> Response {
    let op = body.map_err(Fail::from).map(|Json(b)| Op::ArchRegister { path: b.path });
    dispatch(st, op).await
}

async fn convergence(State(st): State<AppState>) -> Response {
    dispatch(st, Ok(Op::ConvergeCheck)).await
}

async fn matrix(State(st): State<AppState>, q: Q<SeverityQuery>) -> Response {
    let op = q.map_err(Fail::from).map(|Query(q)| Op::MatrixShow { min_severity: q.min_severity });
    dispatch(st, op).await
}

async fn matrix_check(State(st): State<AppState>) -> Response {
    dispatch(st, Ok(Op::MatrixCheck)).await
}

async fn matrix_cells(State(st): State<AppState>, body: Body<CellBody>) -> Response {
    let op = (|| {
        let Json(b) = body?;
        let input = match b.outcome.as_str() {
            "explicit_none" => AssessmentInput::ExplicitNone,
            "findings" => AssessmentInput::Findings(b.findings),
            other => return Err(Fail::BadRequest(format!("outcome must be explicit_none or findings, got {other:?}"))),
        };
        Ok(Op::Assess { module: b.module, lens: b.lens, input })
    })();
    dispatch(st, op).await
}

async fn matrix_decide(State(st): State<AppState>, body: Body<DecideBody>) -> Response {
    let op = body.map_err(Fail::from).map(|Json(b)| Op::MatrixDecide { flag: b.flag, decision: b.decision });
    dispatch(st, op).await
}

async fn finding_list(State(st): State<AppState>, q: Q<OpenQuery>) -> Response {
    let op = q.map_err(Fail::from).map(|Query(q)| Op::FindingList { open_only: q.open });
    dispatch(st, op).await
}

async fn finding_add(State(st): State<AppState>, body: Body<FindingBody>) -> Response {
    let op = body.map_err(Fail::from).map(|Json(b)| Op::Assess {
        module: b.module,
        lens: b.lens,
        input: AssessmentInput::Findings(vec![NewFinding { severity: b.severity, description: b.description }]),
    });
    dispatch(st, op).await
}

async fn triage(State(st): State<AppState>, Path(id): Path<String>, body: Body<TriageBody>) -> Response {
    let op = (|| {
        let Json(b) = body?;
        Ok(Op::Triage { finding_id: id, decision: Decision::parse(&b.decision, b.rationale.as_deref())? })
    })();
    dispatch(st, op).await
}

async fn resolve(State(st): State<AppState>, Path(id): Path<String>, body: Body<ResolveBody>) -> Response {
    let op = body.map_err(Fail::from).map(|Json(b)| Op::Resolve { finding_id: id, note: b.note });
    dispatch(st, op).await
}

async fn gate_show(State(st): State<AppState>, Path(gate): Path<String>) -> Response {
    let op = gate.parse().map(|gate| Op::GateShow { gate }).map_err(Fail::from);
    dispatch(st, op).await
}

async fn gate_submit(State(st): State<AppState>, Path(gate): Path<String>, body: Body<GateSubmission>) -> Response {
    let op = (|| {
        let Json(submission) = body?;
        Ok(Op::GateSubmit { gate: gate.parse()?, submission })
    })();
    dispatch(st, op).await
}

async fn transition(State(st): State<AppState>, body: Body<TransitionBody>) -> Response {
    let op = (|| {
        let Json(b) = body?;
        Ok(Op::Transition { to: phase(b.to_phase)?, gate_ref: b.gate_ref })
    })();
    dispatch(st, op).await
}

async fn artifact_list(State(st): State<AppState>, q: Q<PhaseQuery>) -> Response {
    let op = (|| {
        let Query(q) = q?;
        Ok(Op::ArtifactList { phase: phase(q.phase)? })
    })();
    dispatch(st, op).await
}

async fn artifact_add(State(st): State<AppState>, body: Body<ArtifactBody>) -> Response {
    let op = (|| {
        let Json(b) = body?;
        Ok(Op::ArtifactAdd { phase: phase(b.phase)?, version: b.version, path: b.path })
    })();
    dispatch(st, op).await
}

async fn artifact_verify(State(st): State<AppState>) -> Response {
    dispatch(st, Ok(Op::ArtifactVerify)).await
}

async fn microcheck(State(st): State<AppState>, body: Body<MicroCheckBody>) -> Response {
    let op = body.map_err(Fail::from).map(|Json(b)| Op::MicroCheck {
        module: b.module,
        response: b.response,
        divergences: b.divergences,
    });
    dispatch(st, op).await
}

async fn checklist(State(st): State<AppState>, body: Body<ChecklistBody>) -> Response {
    let op = body.map_err(Fail::from).map(|Json(b)| Op::Checklist { requirement_id: b.requirement_id, note: b.note });
    dispatch(st, op).await
}

async fn scope(State(st): State<AppState>) -> Response {
    dispatch(st, Ok(Op::Scope)).await
}

async fn metrics_efficiency(State(st): State<AppState>, body: Body<EfficiencyBody>) -> Response {
    let op = body.map_err(Fail::from).map(|Json(b)| Op::MetricsEfficiency {
        relevant_tokens: b.relevant_tokens,
        total_tokens: b.total_tokens,
    });
    dispatch(st, op).await
}

async fn metrics_adoption(State(st): State<AppState>, body: Body<AdoptionInput>) -> Response {
    let op = body.map_err(Fail::from).map(|Json(input)| Op::MetricsAdoption { input });
    dispatch(st, op).await
}

/// Renders the scaffold, writes it under specs/prompts/ and marks the
/// embedded feedback consumed, exactly like `converge prompt`.
async fn prompt(State(st): State<AppState>, Path((ph, kind)): Path<(u8, String)>, q: Q<TargetQuery>) -> Response {
    let op = (|| {
        let Query(q) = q?;
        let kind = match q.target {
            Some(t) => PromptKind::parse(&kind, Some(&t))?,
            None => kind.parse()?,
        };
        Ok(Op::Prompt { phase: phase(ph)?, kind })
    })();
    dispatch(st, op).await
}

async fn not_found() -> Response {
    envelope(
        StatusCode::NOT_FOUND,
        ApiEnvelope::err("NO_ROUTE", "no such endpoint", Value::Null),
        None,
    )
}

/// Wraps anything that left a handler without an envelope (405s, for one).
async fn ensure_envelope(resp: Response) -> Response {
    let is_json = resp
        .headers()
        .get(CONTENT_TYPE)
        .is_some_and(|v| v.as_bytes().starts_with(b"application/json"));
    if is_json {
        return resp;
    }
    let status = resp.status();
    let code = match status {
        StatusCode::METHOD_NOT_ALLOWED => "METHOD_NOT_ALLOWED",
        StatusCode::NOT_FOUND => "NO_ROUTE",
        _ => "HTTP_ERROR",
    };
    let message = status.canonical_reason().unwrap_or("request failed");
    envelope(status, ApiEnvelope::err(code, message, Value::Null), None)
}

async fn require_token(State(st): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(expected) = &st.token {
        let given = req.headers().get(TOKEN_HEADER).map(|v| v.as_bytes());
        if given != Some(expected.as_bytes()) {
            return envelope(
                StatusCode::UNAUTHORIZED,
                ApiEnvelope::err("UNAUTHORIZED", format!("missing or wrong {TOKEN_HEADER} header"), Value::Null),
                None,
            );
        }
    }
    next.run(req).await
}

pub fn router(root: impl Into<PathBuf>, token: Option<String>) -> Router {
    let st = AppState {
        root: Arc::new(root.into()),
        writer: Arc::new(tokio::sync::Mutex::new(())),
        token: token.map(Arc::from),
    };
    let v1 = Router::new()
        .route("/project", get(project))
        .route("/status", get(status))
        .route("/lenses", get(lenses))
        .route("/lenses/:lens_id/rationale", put(lens_rationale))
        .route("/context/:flag", put(set_context))
        .route("/score", get(score_show).post(score_set))
        .route("/discovery/teachbacks", post(teachback))
        .route("/discovery/hsa", get(hsa_show))
        .route("/discovery/hsa/:level/converge", post(hsa_converge))
        .route("/discovery/hsa/:level/notes", put(hsa_notes))
        .route("/discovery/hsa/retroactions", post(hsa_retroact))
        .route("/architecture/versions", get(arch_list).post(arch_register))
        .route("/convergence", get(convergence))
        .route("/matrix", get(matrix))
        .route("/matrix/check", get(matrix_check))
        .route("/matrix/cells", post(matrix_cells))
        .route("/matrix/decisions", post(matrix_decide))
        .route("/findings", get(finding_list).post(finding_add))
        .route("/findings/:id/triage", post(triage))
        .route("/findings/:id/resolve", post(resolve))
        .route("/gates/:gate_id", get(gate_show).post(gate_submit))
        .route("/transitions", post(transition))
        .route("/artifacts", get(artifact_list).post(artifact_add))
        .route("/artifacts/verify", get(artifact_verify))
        .route("/microchecks", post(microcheck))
        .route("/checklist", post(checklist))
        .route("/scope", get(scope))
        .route("/metrics/efficiency", post(metrics_efficiency))
        .route("/metrics/adoption", post(metrics_adoption))
        .route("/prompts/:phase/:kind", get(prompt));
    Router::new()
        .nest("/api/v1", v1)
        .fallback(not_found)
        .layer(middleware::map_response(ensure_envelope))
        .layer(middleware::from_fn_with_state(st.clone(), require_token))
        .with_state(st)
}

#[derive(Debug)]
pub struct ServeError {
    pub code: String,
    pub message: String,
    pub exit: i32,
}

impl From<Error> for ServeError {
    fn from(e: Error) -> Self {
        ServeError { code: e.code().to_string(), message: e.to_string(), exit: crate::exit_code(e.class()) }
    }
}

pub fn check_bind(bind: SocketAddr, token: Option<&str>) -> Result<(), ServeError> {
    if !bind.ip().is_loopback() && token.is_none_or(|t| t.is_empty()) {
        return Err(ServeError {
            code: "TOKEN_REQUIRED".into(),
            message: format!("binding {bind} beyond loopback requires --token"),
            exit: crate::exit::INVALID,
        });
    }
    Ok(())
}

pub fn serve_blocking(root: &FsPath, bind: SocketAddr, token: Option<String>) -> Result<(), ServeError> {
    Project::open(root)?;
    check_bind(bind, token.as_deref())?;
    let bind_failure = |e: std::io::Error| ServeError {
        code: "BIND_FAILURE".into(),
        message: format!("cannot listen on {bind}: {e}"),
        exit: crate::exit::OPERATIONAL,
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(bind_failure)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind).await.map_err(bind_failure)?;
        eprintln!("serving {} on http://{}/api/v1", root.display(), listener.local_addr().map_err(bind_failure)?);
        axum::serve(listener, router(root, token)).await.map_err(bind_failure)
    })
}
