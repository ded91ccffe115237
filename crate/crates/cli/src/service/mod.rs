//! HTTP interface for the interactive placement loop.

mod instruction;

pub use instruction::{parse_instruction, ParseError, ParsedInstruction, LEXICON};

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use relplace_core::checkpoint::load_checkpoint;
use relplace_core::relnet::RelNet;
use relplace_core::scenes::{
    canonical_table, encode_png, generate_scene, insert_subject, relation_oracle, render, Catalog, GenerationConfig,
    ObjectSpec, Rect, Region, SceneSpec, SubjectInstance, CANONICAL_PROJECTION,
};
use relplace_core::spatial::{heatmap_png, place, PlacementMaps, PlacementStrategy, SpatialModel};
use relplace_core::Relation;

use crate::args::ServeArgs;
use crate::error::CliError;
use crate::resolve_config;

/// Read-only model handles shared by all sessions.
pub struct Models {
    pub spatial: SpatialModel<f32>,
    /// Used to report the classifier's reading of each placement.
    pub relnet: Option<RelNet<f32>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Shared>,
}

struct Shared {
    models: Models,
    catalog: Catalog,
    generation: GenerationConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    next_session: AtomicU64,
    seed: u64,
    persist_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Placement {
    pub u: usize,
    pub v: usize,
    pub object_id: u32,
    pub relation: Relation,
    pub reference_id: u32,
    /// Relation the geometric oracle assigns to the result.
    pub oracle_relation: Option<Relation>,
    /// Relation the classifier reads from the new render, when loaded.
    pub classifier_relation: Option<Relation>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Rating {
    pub likert: u8,
    pub success: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct HistoryEntry {
    pub instruction: String,
    pub parsed: ParsedInstruction,
    pub placement: Placement,
    pub rating: Rating,
}

struct Pending {
    parsed: ParsedInstruction,
    maps: PlacementMaps,
}

pub struct Session {
    id: String,
    scene: SceneSpec,
    pending_subject: Option<SubjectInstance>,
    instruction: Option<Pending>,
    unrated: Option<(ParsedInstruction, Placement)>,
    history: Vec<HistoryEntry>,
    rng: ChaCha8Rng,
}

/// JSON error body `{"error": {...}}` with an HTTP status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "kind": kind, "message": message.into() }) }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    fn parse(err: ParseError) -> Self {
        let mut body = serde_json::to_value(&err).expect("serializes");
        body["message"] = json!(err.to_string());
        Self { status: StatusCode::UNPROCESSABLE_ENTITY, body }
    }

    fn internal(err: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", err.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = self.body;
        body["status"] = json!(self.status.as_u16());
        (self.status, Json(json!({ "error": body }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::invalid(r.body_text())
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

impl AppState {
    pub fn new(models: Models, catalog: Catalog, width: u32, height: u32, seed: u64) -> Self {
        Self {
            inner: Arc::new(Shared {
                models,
                catalog,
                generation: GenerationConfig::with_size(width, height),
                sessions: Mutex::new(HashMap::new()),
                next_session: AtomicU64::new(1),
                seed,
                persist_dir: None,
            }),
        }
    }

    /// Appends every rated placement to `<dir>/<session>.jsonl`.
    pub fn with_persistence(mut self, dir: PathBuf) -> Self {
        Arc::get_mut(&mut self.inner).expect("state not yet shared").persist_dir = Some(dir);
        self
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.inner
            .sessions
            .lock()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/:id/scene", get(get_scene))
        .route("/session/:id/scene/objects", post(edit_objects))
        .route("/session/:id/subject", post(set_subject))
        .route("/session/:id/instruct", post(instruct))
        .route("/session/:id/place", post(place_subject))
        .route("/session/:id/rate", post(rate))
        .route("/session/:id/report", get(report))
        .with_state(state)
}

fn scene_view(scene: &SceneSpec) -> Result<Value, ApiError> {
    let png = encode_png(&render(scene)).map_err(ApiError::internal)?;
    Ok(json!({
        "scene": scene,
        "table_polygon": Region::polygon_of(&scene.table_region),
        "png_base64": BASE64.encode(png),
    }))
}

fn lock(session: &Arc<Mutex<Session>>) -> std::sync::MutexGuard<'_, Session> {
    session.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CreateSession {
    /// Start from a generated scene instead of an empty table.
    seed: Option<u64>,
}

async fn create_session(State(state): State<AppState>, body: Option<Json<CreateSession>>) -> ApiResult {
    let request = body.map(|Json(b)| b).unwrap_or_default();
    let shared = &state.inner;
    let n = shared.next_session.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{n:04}");
    let scene = match request.seed {
        Some(seed) => generate_scene(seed, &shared.generation).map_err(|e| ApiError::invalid(e.to_string()))?,
        None => {
            let g = &shared.generation;
            SceneSpec::empty(g.width, g.height, canonical_table(g), CANONICAL_PROJECTION)
        }
    };
    let view = scene_view(&scene)?;
    let session = Session {
        id: id.clone(),
        scene,
        pending_subject: None,
        instruction: None,
        unrated: None,
        history: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(shared.seed ^ n.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
    };
    shared.sessions.lock().expect("session table poisoned").insert(id.clone(), Arc::new(Mutex::new(session)));
    let mut out = json!({ "id": id });
    out.as_object_mut().unwrap().extend(view.as_object().unwrap().clone());
    Ok(Json(out))
}

async fn get_scene(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let session = state.session(&id)?;
    let s = lock(&session);
    Ok(Json(scene_view(&s.scene)?))
}

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
enum ObjectEdit {
    Add { name: String, center: (i32, i32) },
    Move { id: u32, center: (i32, i32) },
    Remove { id: u32 },
}

/// Objects that ride along with `id` (stacked on it or contained in it), recursively.
fn dependents(scene: &SceneSpec, id: u32) -> Vec<u32> {
    let mut out = vec![id];
    let mut i = 0;
    while i < out.len() {
        let host = out[i];
        for o in &scene.objects {
            if (o.support_id == Some(host) || o.container_id == Some(host)) && !out.contains(&o.id) {
                out.push(o.id);
            }
        }
        i += 1;
    }
    out
}

fn check_floor_footprint(scene: &SceneSpec, bbox: Rect, ignore: &[u32]) -> Result<(), ApiError> {
    if !scene.table_region.contains_rect(&bbox) {
        return Err(ApiError::invalid(format!("object at {:?} would leave the table {:?}", bbox, scene.table_region)));
    }
    if let Some(o) = scene.objects.iter().find(|o| !ignore.contains(&o.id) && o.bbox().intersects(&bbox)) {
        return Err(ApiError::invalid(format!("object would overlap object {} ({})", o.id, o.name)));
    }
    Ok(())
}

async fn edit_objects(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ObjectEdit>, JsonRejection>,
) -> ApiResult {
    let Json(edit) = body?;
    let session = state.session(&id)?;
    let mut s = lock(&session);
    let mut scene = s.scene.clone();
    match edit {
        ObjectEdit::Add { name, center } => {
            let template = state
                .inner
                .catalog
                .get(&name)
                .ok_or_else(|| ApiError::invalid(format!("{name:?} is not in the catalog")))?;
            let inst = template.canonical(scene.width);
            let bbox = Rect::centered(center, inst.size);
            check_floor_footprint(&scene, bbox, &[])?;
            let new_id = scene.next_id();
            scene.objects.push(ObjectSpec {
                id: new_id,
                name: inst.name,
                shape: inst.shape,
                center,
                size: inst.size,
                color: inst.color,
                depth_rank: 0,
                support_id: None,
                container_id: None,
            });
        }
        ObjectEdit::Move { id: oid, center } => {
            let obj = scene.object(oid).map_err(|e| ApiError::invalid(e.to_string()))?.clone();
            if !obj.is_on_floor() {
                return Err(ApiError::invalid(format!("object {oid} rests on another object; move its host instead")));
            }
            let group = dependents(&scene, oid);
            check_floor_footprint(&scene, Rect::centered(center, obj.size), &group)?;
            let (dx, dy) = (center.0 - obj.center.0, center.1 - obj.center.1);
            for o in scene.objects.iter_mut().filter(|o| group.contains(&o.id)) {
                o.center = (o.center.0 + dx, o.center.1 + dy);
            }
            if let Some(o) =
                scene.objects.iter().find(|o| group.contains(&o.id) && !scene.image_rect().contains_rect(&o.bbox()))
            {
                return Err(ApiError::invalid(format!("object {} would leave the image", o.id)));
            }
        }
        ObjectEdit::Remove { id: oid } => {
            scene.object(oid).map_err(|e| ApiError::invalid(e.to_string()))?;
            let group = dependents(&scene, oid);
            scene.objects.retain(|o| !group.contains(&o.id));
        }
    }
    scene.assign_depth_ranks();
    s.scene = scene;
    // Heatmaps were computed for the old layout.
    s.instruction = None;
    Ok(Json(scene_view(&s.scene)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetSubject {
    name: String,
}

async fn set_subject(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<SetSubject>, JsonRejection>,
) -> ApiResult {
    let Json(req) = body?;
    let session = state.session(&id)?;
    let mut s = lock(&session);
    let template = state
        .inner
        .catalog
        .get(&req.name.to_lowercase())
        .ok_or_else(|| ApiError::invalid(format!("{:?} is not in the catalog", req.name)))?;
    let inst = template.canonical(s.scene.width);
    s.pending_subject = Some(inst.clone());
    Ok(Json(json!({ "pending_subject": inst })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Instruct {
    text: String,
}

async fn instruct(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<Instruct>, JsonRejection>,
) -> ApiResult {
    let Json(req) = body?;
    let session = state.session(&id)?;
    let mut s = lock(&session);
    let parsed = parse_instruction(&req.text, &s.scene, &state.inner.catalog).map_err(ApiError::parse)?;
    if let Some(subject) = &s.pending_subject {
        if subject.name != parsed.subject_name {
            return Err(ApiError::invalid(format!(
                "instruction names {:?} but the gripper holds {:?}",
                parsed.subject_name, subject.name
            )));
        }
    }
    let model = &state.inner.models.spatial;
    let (w, h) = (s.scene.width as usize, s.scene.height as usize);
    let bbox = s.scene.object(parsed.reference_id).map_err(ApiError::internal)?.bbox();
    let a_o = model.config.mask(bbox, w, h).map_err(ApiError::internal)?;
    let maps = model.predict(&render(&s.scene).to_tensor(), &a_o).map_err(ApiError::internal)?;
    let mut heatmaps = Vec::new();
    for r in Relation::ALL {
        let (png, normalization) = heatmap_png(&maps, r).map_err(ApiError::internal)?;
        heatmaps.push(json!({ "relation": r, "png_base64": BASE64.encode(png), "normalization": normalization }));
    }
    let out = json!({ "parsed": parsed, "selected": parsed.relation, "width": w, "height": h, "heatmaps": heatmaps });
    s.instruction = Some(Pending { parsed, maps });
    Ok(Json(out))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PlaceRequest {
    strategy: PlacementStrategy,
}

async fn place_subject(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<PlaceRequest>>,
) -> ApiResult {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let session = state.session(&id)?;
    let mut guard = lock(&session);
    let s = &mut *guard;
    let subject =
        s.pending_subject.clone().ok_or_else(|| ApiError::conflict("no pending subject; POST /subject first"))?;
    let pending = s
        .instruction
        .as_ref()
        .ok_or_else(|| ApiError::conflict("no instruction for this scene; POST /instruct first"))?;
    let relation = pending.parsed.relation;
    let reference_id = pending.parsed.reference_id;
    let table = Region::Rect(s.scene.table_region);
    let (u, v) = place(&pending.maps, relation, req.strategy, Some(&table), &mut s.rng)
        .map_err(|e| ApiError::invalid(e.to_string()))?;
    let (scene, object_id) = insert_subject(&s.scene, reference_id, &subject, u as i32, v as i32)
        .map_err(|e| ApiError::invalid(e.to_string()))?;
    let oracle_relation = relation_oracle(&scene, reference_id, object_id).map_err(ApiError::internal)?;
    let image = render(&scene);
    let classifier_relation = match &state.inner.models.relnet {
        Some(net) => {
            let (w, h) = (scene.width as usize, scene.height as usize);
            let mask = |oid| -> Result<_, ApiError> {
                let bbox = scene.object(oid).map_err(ApiError::internal)?.bbox().intersection(&scene.image_rect());
                net.config.mask(bbox.unwrap_or(Rect { x: 0, y: 0, w: 1, h: 1 }), w, h).map_err(ApiError::internal)
            };
            let posterior = net
                .classify(&image.to_tensor(), &mask(reference_id)?, &mask(object_id)?)
                .map_err(ApiError::internal)?;
            Some(posterior.argmax())
        }
        None => None,
    };
    let placement = Placement { u, v, object_id, relation, reference_id, oracle_relation, classifier_relation };
    let parsed = s.instruction.take().expect("checked above").parsed;
    s.scene = scene;
    s.pending_subject = None;
    s.unrated = Some((parsed, placement.clone()));
    let mut out = scene_view(&s.scene)?;
    out["placement"] = serde_json::to_value(&placement).expect("serializes");
    Ok(Json(out))
}

async fn rate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<Rating>, JsonRejection>,
) -> ApiResult {
    let Json(rating) = body?;
    if !(1..=10).contains(&rating.likert) {
        return Err(ApiError::invalid(format!("likert must lie in 1..=10, got {}", rating.likert)));
    }
    let session = state.session(&id)?;
    let mut s = lock(&session);
    let (parsed, placement) = s.unrated.take().ok_or_else(|| ApiError::conflict("no unrated placement"))?;
    let entry = HistoryEntry { instruction: parsed.raw_text.clone(), parsed, placement, rating };
    if let Some(dir) = &state.inner.persist_dir {
        let path = dir.join(format!("{}.jsonl", s.id));
        let line = serde_json::to_string(&entry).expect("serializes") + "\n";
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(ApiError::internal)?;
    }
    s.history.push(entry);
    Ok(Json(json!({ "history_length": s.history.len() })))
}

fn summarize(entries: &[&HistoryEntry]) -> Value {
    let n = entries.len();
    let mean = |f: &dyn Fn(&HistoryEntry) -> f64| (n > 0).then(|| entries.iter().map(|e| f(e)).sum::<f64>() / n as f64);
    json!({
        "count": n,
        "mean_likert": mean(&|e| e.rating.likert as f64),
        "success_rate": mean(&|e| if e.rating.success { 1.0 } else { 0.0 }),
    })
}

async fn report(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let session = state.session(&id)?;
    let s = lock(&session);
    let all: Vec<&HistoryEntry> = s.history.iter().collect();
    let per_relation: Vec<Value> = Relation::ALL
        .iter()
        .map(|&r| {
            let of: Vec<&HistoryEntry> = all.iter().copied().filter(|e| e.parsed.relation == r).collect();
            let mut v = summarize(&of);
            v["relation"] = json!(r);
            v
        })
        .collect();
    Ok(Json(json!({ "overall": summarize(&all), "relations": per_relation, "history": s.history })))
}

/// Loads models and serves until interrupted.
pub fn run(args: &ServeArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args.common.config.as_deref(), |c| args.apply(c))?;
    let spatial_path = crate::require_path(&cfg.paths.spatial, "--spatial")?;
    let spatial = load_checkpoint(&spatial_path)?.spatial()?;
    let relnet = match &cfg.paths.relnet {
        Some(p) => Some(load_checkpoint(p)?.relnet()?),
        None => None,
    };
    let catalog = match &cfg.paths.catalog {
        Some(dir) => {
            let path = dir.join("catalog.json");
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::runtime(format!("invalid catalog {}: {e}", path.display())))?
        }
        None => Catalog::default(),
    };
    let [w, h] = cfg.image_size;
    let g = spatial.config.granularity() as u32;
    if w % g != 0 || h % g != 0 {
        return Err(CliError::usage(format!("--size must have sides divisible by {g}")));
    }
    let mut state = AppState::new(Models { spatial, relnet }, catalog, w, h, cfg.seed);
    if let Some(dir) = &args.sessions_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
        state = state.with_persistence(dir.clone());
    }
    let app = router(state);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime(e.to_string()))?;
    runtime.block_on(async move {
        let addr = std::net::SocketAddr::from(([127, 0, 0, 1], cfg.serve.port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::runtime(format!("cannot bind {addr}: {e}")))?;
        println!("listening on http://{addr}");
        axum::serve(listener, app).await.map_err(|e| CliError::runtime(e.to_string()))
    })
}
