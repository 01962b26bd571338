//! HTTP routes over the published snapshot. Handlers only read; each
//! request works against the snapshot current when it arrived.

use std::collections::BTreeSet;

use act_core::analytics::{self, DEFAULT_AGENCY_LIMIT};
use act_core::annotate::Category;
use act_core::cluster::{DEFAULT_RELATED_K, DEFAULT_TRENDING_K};
use act_core::ingest::parse_timestamp;
use act_core::media::DEFAULT_MEDIA_K;
use act_core::pipeline::SharedSnapshot;
use act_core::store::{BBox, FilterQuery, MAX_LIMIT};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const BBOX_IGNORED_HEADER: &str = "x-bbox-ignored";

const FILTER_PARAMS: &[&str] = &["bbox", "category", "q", "since", "until", "geotagged", "limit"];
const MAX_K: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    pub fn bad(field: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            error: error.into(),
            field: Some(field.into()),
        }
    }

    fn not_found(id: &str) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            error: format!("unknown event {id:?}"),
            field: None,
        }
    }
}

impl From<act_core::Error> for ApiError {
    fn from(e: act_core::Error) -> Self {
        match e {
            act_core::Error::InvalidQuery { field, reason } => ApiError::bad(field, reason),
            other => Self {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                error: other.to_string(),
                field: None,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type Params = Vec<(String, String)>;

/// Rejects unknown and repeated parameters.
fn check_params<'a>(params: &'a Params, allowed: &[&str]) -> Result<Vec<(&'a str, &'a str)>, ApiError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(params.len());
    for (k, v) in params {
        if !allowed.contains(&k.as_str()) {
            return Err(ApiError::bad(k.as_str(), format!("unknown parameter; expected one of {}", allowed.join(", "))));
        }
        if !seen.insert(k.as_str()) {
            return Err(ApiError::bad(k.as_str(), "parameter given more than once"));
        }
        out.push((k.as_str(), v.as_str()));
    }
    Ok(out)
}

fn parse_count(field: &str, v: &str, max: usize) -> Result<usize, ApiError> {
    match v.parse::<usize>() {
        Ok(n) if (1..=max).contains(&n) => Ok(n),
        _ => Err(ApiError::bad(field, format!("must be an integer between 1 and {max}"))),
    }
}

fn parse_bbox(v: &str) -> Result<BBox, ApiError> {
    let parts: Vec<f64> = v
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| ApiError::bad("bbox", "expected min_lon,min_lat,max_lon,max_lat"))?;
    let [min_lon, min_lat, max_lon, max_lat] = parts[..] else {
        return Err(ApiError::bad("bbox", "expected min_lon,min_lat,max_lon,max_lat"));
    };
    Ok(BBox {
        min_lon,
        min_lat,
        max_lon,
        max_lat,
    })
}

fn parse_categories(v: &str) -> Result<BTreeSet<Category>, ApiError> {
    v.split(',')
        .map(|c| {
            c.trim()
                .parse::<Category>()
                .map_err(|_| ApiError::bad("category", format!("unknown category {c:?}")))
        })
        .collect()
}

/// Parses `/events` filter parameters; `extra` names further parameters
/// accepted and returned untouched.
pub fn parse_filter<'a>(params: &'a Params, extra: &[&str]) -> Result<(FilterQuery, Vec<(&'a str, &'a str)>), ApiError> {
    let allowed: Vec<&str> = FILTER_PARAMS.iter().chain(extra).copied().collect();
    let mut q = FilterQuery::default();
    let mut rest = Vec::new();
    for (k, v) in check_params(params, &allowed)? {
        match k {
            "bbox" => q.bbox = Some(parse_bbox(v)?),
            "category" => q.categories = Some(parse_categories(v)?),
            "q" => q.keyword = Some(v.to_string()),
            "since" => q.since = Some(parse_timestamp(v).ok_or_else(|| ApiError::bad("since", "expected an RFC 3339 timestamp"))?),
            "until" => q.until = Some(parse_timestamp(v).ok_or_else(|| ApiError::bad("until", "expected an RFC 3339 timestamp"))?),
            "geotagged" => {
                q.geotagged = Some(match v {
                    "true" => true,
                    "false" => false,
                    _ => return Err(ApiError::bad("geotagged", "expected true or false")),
                })
            }
            "limit" => q.limit = parse_count("limit", v, MAX_LIMIT)?,
            _ => rest.push((k, v)),
        }
    }
    q.validate()?;
    Ok((q, rest))
}

fn parse_k(rest: &[(&str, &str)], default: usize) -> Result<usize, ApiError> {
    match rest.iter().find(|(k, _)| *k == "k") {
        Some((_, v)) => parse_count("k", v, MAX_K),
        None => Ok(default),
    }
}

fn with_bbox_flag(q: &FilterQuery, body: impl IntoResponse) -> Response {
    let mut resp = body.into_response();
    if q.bbox_ignored() {
        resp.headers_mut()
            .insert(HeaderName::from_static(BBOX_IGNORED_HEADER), HeaderValue::from_static("true"));
    }
    resp
}

async fn events(State(s): State<SharedSnapshot>, Query(params): Query<Params>) -> Result<Response, ApiError> {
    let (q, _) = parse_filter(&params, &[])?;
    let snap = s.load();
    Ok(with_bbox_flag(&q, Json(analytics::event_summaries(&snap, &q)?)))
}

async fn event_detail(State(s): State<SharedSnapshot>, Path(id): Path<String>, Query(params): Query<Params>) -> Result<Response, ApiError> {
    check_params(&params, &[])?;
    let snap = s.load();
    let detail = analytics::event_detail(&snap, &id).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(detail).into_response())
}

async fn related(State(s): State<SharedSnapshot>, Path(id): Path<String>, Query(params): Query<Params>) -> Result<Response, ApiError> {
    let k = parse_k(&check_params(&params, &["k"])?, DEFAULT_RELATED_K)?;
    let snap = s.load();
    let list = analytics::related(&snap, &id, k).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(list).into_response())
}

async fn media(State(s): State<SharedSnapshot>, Path(id): Path<String>, Query(params): Query<Params>) -> Result<Response, ApiError> {
    let k = parse_k(&check_params(&params, &["k"])?, DEFAULT_MEDIA_K)?;
    let snap = s.load();
    let list = analytics::media(&snap, &id, k).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(list).into_response())
}

async fn terms(State(s): State<SharedSnapshot>, Query(params): Query<Params>) -> Result<Response, ApiError> {
    let (q, rest) = parse_filter(&params, &["k"])?;
    let k = parse_k(&rest, DEFAULT_TRENDING_K)?;
    let snap = s.load();
    Ok(with_bbox_flag(&q, Json(analytics::terms(&snap, &q, k)?)))
}

async fn agencies(State(s): State<SharedSnapshot>, Query(params): Query<Params>) -> Result<Response, ApiError> {
    let checked = check_params(&params, &["limit"])?;
    let limit = match checked.first() {
        Some((_, v)) => parse_count("limit", v, MAX_LIMIT)?,
        None => DEFAULT_AGENCY_LIMIT,
    };
    Ok(Json(analytics::agencies(&s.load(), limit)).into_response())
}

async fn health(State(s): State<SharedSnapshot>, Query(params): Query<Params>) -> Result<Response, ApiError> {
    check_params(&params, &[])?;
    Ok(Json(analytics::health(&s.load())).into_response())
}

/// Routes without CORS; see [`with_cors`].
pub fn router(snapshot: SharedSnapshot) -> Router {
    Router::new()
        .route("/events", get(events))
        .route("/events/{id}", get(event_detail))
        .route("/events/{id}/related", get(related))
        .route("/events/{id}/media", get(media))
        .route("/terms", get(terms))
        .route("/agencies", get(agencies))
        .route("/health", get(health))
        .with_state(snapshot)
}

pub fn with_cors(router: Router, origin: Option<&str>) -> anyhow::Result<Router> {
    let Some(origin) = origin else {
        return Ok(router);
    };
    let origin = HeaderValue::from_str(origin).map_err(|_| anyhow::anyhow!("server.cors_origin: invalid origin {origin:?}"))?;
    Ok(router.layer(
        CorsLayer::new()
            .allow_origin(AllowOrigin::exact(origin))
            .allow_methods([axum::http::Method::GET])
            .expose_headers([HeaderName::from_static(BBOX_IGNORED_HEADER)]),
    ))
}
