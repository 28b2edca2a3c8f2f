use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cfprobe::engine::{generate_cfs, CfConfig, CfConstraints, CfSearch, RangeSet};
use cfprobe::subgroup::{generate_rcf, ClassHistogram, PredictionSummary, RcfOptions, Subgroup};
use cfprobe::tabular::{Binning, Instance};
use cfprobe::Class;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as JsonValue};

use crate::error::{ApiError, ApiResult};
use crate::state::{job_id, AppState, Job, DEFAULT_SESSION, SESSION_HEADER};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/predict", post(predict))
        .route("/cf/instance", post(cf_instance))
        .route("/jobs/{id}", get(job))
        .route("/subgroups", get(list_subgroups).post(create_subgroup))
        .route("/subgroups/{id}", get(get_subgroup).put(refine_subgroup).delete(delete_subgroup))
        .route("/subgroups/{id}/copy", post(copy_subgroup))
        .route("/subgroups/{id}/history", get(history))
        .route("/subgroups/{id}/rcf", post(rcf))
        .route("/subgroups/{id}/instances", get(instances))
        .route("/export", get(export))
        .with_state(state)
}

fn session_id(headers: &HeaderMap) -> String {
    headers
        .get(SESSION_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|s| !s.is_empty())
        .unwrap_or(DEFAULT_SESSION)
        .to_string()
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

fn json_bytes(status: StatusCode, text: &str) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], text.to_string()).into_response()
}

fn accepted(id: &str) -> Response {
    (StatusCode::ACCEPTED, Json(json!({ "job": id }))).into_response()
}

fn check_fingerprint(state: &AppState, given: Option<&str>) -> ApiResult<()> {
    let expected = state.dataset.schema.fingerprint();
    match given {
        Some(fp) if fp != expected => {
            Err(cfprobe::Error::FingerprintMismatch { expected, actual: fp.to_string() }.into())
        }
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct FeatureHistograms {
    feature: String,
    by_prediction: ClassHistogram,
    by_label: ClassHistogram,
}

async fn meta(State(state): State<AppState>) -> Response {
    let d = &state.dataset;
    let histograms: Vec<FeatureHistograms> = d
        .schema
        .features()
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let bins = Binning::for_feature(spec, state.bin_count);
            let mut by_prediction = ClassHistogram::new(bins.clone());
            let mut by_label = ClassHistogram::new(bins);
            for (r, row) in d.rows.iter().enumerate() {
                by_prediction.add(row.get(i), state.predictions[r]);
                by_label.add(row.get(i), d.labels[r]);
            }
            FeatureHistograms { feature: spec.name.clone(), by_prediction, by_label }
        })
        .collect();
    let all: Vec<usize> = (0..d.len()).collect();
    Json(json!({
        "dataset": d.name,
        "rows": d.len(),
        "schema": d.schema,
        "schema_fingerprint": d.schema.fingerprint(),
        "bin_count": state.bin_count,
        "summary": PredictionSummary::from_rows(&state.predictions, &d.labels, &all),
        "histograms": histograms,
    }))
    .into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictRequest {
    instance: JsonValue,
    schema_fingerprint: Option<String>,
}

async fn predict(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: PredictRequest = parse(&body)?;
    check_fingerprint(&state, req.schema_fingerprint.as_deref())?;
    let schema = &state.dataset.schema;
    let instance = schema.parse_instance(&req.instance)?;
    let prediction = state.model.predict(&schema.encode(&instance)?)?;
    Ok(Json(prediction).into_response())
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct CfRequest {
    #[serde(default)]
    instance: Option<JsonValue>,
    /// Dataset row to explain instead of an explicit instance.
    #[serde(default)]
    row: Option<usize>,
    #[serde(default)]
    constraints: CfConstraints,
    #[serde(default)]
    config: CfConfig,
    #[serde(default)]
    schema_fingerprint: Option<String>,
}

fn resolve_instance(state: &AppState, instance: Option<&JsonValue>, row: Option<usize>) -> ApiResult<Instance> {
    match (instance, row) {
        (Some(v), None) => Ok(state.dataset.schema.parse_instance(v)?),
        (None, Some(r)) => state
            .dataset
            .rows
            .get(r)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("row {r} does not exist"))),
        _ => Err(ApiError::bad_request("give exactly one of `instance` and `row`")),
    }
}

async fn cf_instance(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CfRequest = parse(&body)?;
    check_fingerprint(&state, req.schema_fingerprint.as_deref())?;
    let instance = resolve_instance(&state, req.instance.as_ref(), req.row)?;
    // validate eagerly so bad requests fail with 400 instead of a failed job
    CfSearch::new(&state.dataset.schema, &state.model, &instance, &req.constraints, &req.config)?;
    let key = serde_json::to_string(&(&instance, &req.constraints, &req.config)).expect("serializable");
    let id = job_id("cf", &[&state.dataset.schema.fingerprint(), &key]);
    let worker = state.clone();
    let (constraints, config) = (req.constraints, req.config);
    state.submit(&id, move || {
        Ok(generate_cfs(&worker.dataset.schema, &worker.model, &instance, &constraints, &config)?)
    })?;
    Ok(accepted(&id))
}

async fn job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    match state.job(&id) {
        None => Err(ApiError::not_found(format!("unknown job `{id}`"))),
        Some(Job::Running) => Ok((StatusCode::ACCEPTED, Json(json!({ "job": id, "status": "running" }))).into_response()),
        Some(Job::Done(text)) => Ok(json_bytes(StatusCode::OK, &text)),
        Some(Job::Failed(status, message)) => Err(ApiError::new(status, message)),
    }
}

#[derive(Deserialize)]
struct SubgroupRequest {
    #[serde(default)]
    name: Option<String>,
    #[serde(flatten)]
    ranges: RangeSet,
}

async fn list_subgroups(State(state): State<AppState>, headers: HeaderMap) -> Response {
    let list: Vec<Subgroup> = state.with_session(&session_id(&headers), |s| s.registry.list().cloned().collect());
    Json(list).into_response()
}

async fn create_subgroup(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let req: SubgroupRequest = parse(&body)?;
    let sg = state.with_session(&session_id(&headers), |s| {
        let name = req.name.unwrap_or_else(|| format!("subgroup {}", s.registry.list().count() + 1));
        s.registry.define(name, req.ranges, &state.dataset, &state.predictions).cloned()
    })?;
    Ok((StatusCode::CREATED, Json(sg)).into_response())
}

async fn get_subgroup(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> ApiResult<Response> {
    let sg = state.with_session(&session_id(&headers), |s| s.registry.get(id).cloned())?;
    Ok(Json(sg).into_response())
}

async fn refine_subgroup(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<u64>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: SubgroupRequest = parse(&body)?;
    let sg = state.with_session(&session_id(&headers), |s| {
        s.registry.refine(id, req.ranges, &state.dataset, &state.predictions).cloned()
    })?;
    Ok(Json(sg).into_response())
}

async fn delete_subgroup(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> ApiResult<Response> {
    state.with_session(&session_id(&headers), |s| {
        s.rcf.retain(|(sid, _), _| *sid != id);
        s.registry.delete(id)
    })?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn copy_subgroup(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> ApiResult<Response> {
    let sg = state.with_session(&session_id(&headers), |s| s.registry.copy(id).cloned())?;
    Ok((StatusCode::CREATED, Json(sg)).into_response())
}

async fn history(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> ApiResult<Response> {
    let chain: Vec<Subgroup> =
        state.with_session(&session_id(&headers), |s| s.registry.history(id).map(|c| c.into_iter().cloned().collect()))?;
    Ok(Json(chain).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RcfRequest {
    feature: String,
    #[serde(default)]
    config: CfConfig,
    #[serde(default)]
    options: RcfOptions,
}

async fn rcf(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<u64>, body: Bytes) -> ApiResult<Response> {
    let req: RcfRequest = parse(&body)?;
    let session = session_id(&headers);
    let subgroup = state.with_session(&session, |s| s.registry.get(id).cloned())?;
    state.dataset.schema.index_of(&req.feature)?;
    req.config.validate()?;
    if req.options.batch_size == 0 || req.options.bin_count == 0 {
        return Err(ApiError::bad_request("batch_size and bin_count must be positive"));
    }
    if subgroup.is_empty() {
        return Err(cfprobe::Error::EmptySubgroup.into());
    }
    let config_key = serde_json::to_string(&(&req.config, &req.options)).expect("serializable");
    let job = job_id("rcf", &[&session, &id.to_string(), &req.feature, &config_key]);
    let worker = state.clone();
    state.submit(&job, move || {
        let group = generate_rcf(&worker.dataset, &worker.model, &subgroup, &req.feature, &req.config, &req.options)?;
        let group = Arc::new(group);
        worker.with_session(&session, |s| {
            if s.registry.get(id).is_ok() {
                s.rcf.insert((id, req.feature.clone()), Arc::clone(&group));
            }
        });
        Ok(group)
    })?;
    Ok(accepted(&job))
}

#[derive(Deserialize)]
struct InstancesQuery {
    focus: Option<String>,
}

#[derive(Serialize)]
struct LensRow {
    row: usize,
    instance: JsonValue,
    prediction: Class,
    label: Class,
    #[serde(skip_serializing_if = "Option::is_none")]
    counterfactual: Option<LensCf>,
}

#[derive(Serialize)]
struct LensCf {
    instance: JsonValue,
    valid: bool,
    probability: f64,
    changed: Vec<String>,
}

async fn instances(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<u64>,
    Query(q): Query<InstancesQuery>,
) -> ApiResult<Response> {
    let (subgroup, group) = state.with_session(&session_id(&headers), |s| {
        let sg = s.registry.get(id).cloned()?;
        let group = q.focus.as_ref().and_then(|f| s.rcf.get(&(id, f.clone())).cloned());
        Ok::<_, cfprobe::Error>((sg, group))
    })?;
    if let Some(f) = &q.focus {
        state.dataset.schema.index_of(f)?;
    }
    let schema = &state.dataset.schema;
    let rows: Vec<LensRow> = subgroup
        .members
        .iter()
        .enumerate()
        .map(|(k, &r)| LensRow {
            row: r,
            instance: schema.instance_to_json(&state.dataset.rows[r]),
            prediction: state.predictions[r],
            label: state.dataset.labels[r],
            counterfactual: group.as_ref().map(|g| {
                let c = &g.members[k].candidate;
                LensCf {
                    instance: schema.instance_to_json(&c.instance),
                    valid: c.valid,
                    probability: c.probability,
                    changed: c.changed_features().map(str::to_string).collect(),
                }
            }),
        })
        .collect();
    Ok(Json(json!({ "subgroup_id": id, "focus": q.focus, "rows": rows })).into_response())
}

async fn export(State(state): State<AppState>, headers: HeaderMap) -> Response {
    let doc = state.with_session(&session_id(&headers), |s| {
        let subgroups: Vec<&Subgroup> = s.registry.list().collect();
        let mut rcf: Vec<&cfprobe::subgroup::RcfGroup> = s.rcf.values().map(|g| g.as_ref()).collect();
        rcf.sort_by(|a, b| (a.subgroup_id, &a.feature).cmp(&(b.subgroup_id, &b.feature)));
        json!({ "subgroups": subgroups, "rcf": rcf })
    });
    (
        [(header::CONTENT_DISPOSITION, "attachment; filename=\"cfprobe-session.json\"")],
        Json(doc),
    )
        .into_response()
}
