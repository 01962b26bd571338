//! Python bindings. Views come back as plain dicts and lists, in the same
//! shape the HTTP API serves.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use act_core::analytics;
use act_core::annotate::Category;
use act_core::cluster::{DEFAULT_RELATED_K, DEFAULT_TRENDING_K};
use act_core::config::ApiConfig;
use act_core::ingest::{open_corpus, parse_timestamp, DEFAULT_KEYWORDS};
use act_core::media::{index_media, MediaIndex, ReplayRemoteMedia, DEFAULT_MEDIA_K};
use act_core::pipeline::{Outcome, Snapshot};
use act_core::store::{BBox, FilterQuery, Store};
use act_core::{Coords, PipelineParams, RawPost, Resources, TrackConfig};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: act_core::Error) -> PyErr {
    match e {
        act_core::Error::InvalidQuery { .. } | act_core::Error::InvalidConfig { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn timestamp(field: &str, s: &str) -> PyResult<chrono::DateTime<chrono::Utc>> {
    parse_timestamp(s).ok_or_else(|| PyValueError::new_err(format!("{field}: expected an RFC 3339 timestamp, got {s:?}")))
}

/// Lowercased content tokens with URLs and stopwords removed.
#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    act_core::parse::tokenize(text)
}

/// Hashtags, mentions, URLs and retweet marker as a dict.
#[pyfunction]
fn extract_entities<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &act_core::parse::extract_entities(text))
}

#[pyfunction]
fn normalize_text(text: &str) -> String {
    act_core::parse::normalize_text(text)
}

/// Single-writer pipeline plus the snapshot most recently published.
#[pyclass(module = "act_py")]
struct Pipeline {
    inner: Mutex<act_core::Pipeline>,
    snapshot: Mutex<Arc<Snapshot>>,
}

impl Pipeline {
    fn with<T>(&self, f: impl FnOnce(&mut act_core::Pipeline) -> T) -> T {
        f(&mut self.inner.lock().expect("pipeline lock"))
    }

    fn current(&self) -> Arc<Snapshot> {
        self.snapshot.lock().expect("snapshot lock").clone()
    }
}

#[pymethods]
impl Pipeline {
    /// With `config`, resources, parameters, tracking and media come from
    /// that TOML file. Otherwise shipped resources are used and `keywords`
    /// defaults to the built-in disaster terms.
    #[new]
    #[pyo3(signature = (config=None, keywords=None, accounts=None, data_dir=None))]
    fn new(config: Option<PathBuf>, keywords: Option<Vec<String>>, accounts: Option<Vec<String>>, data_dir: Option<PathBuf>) -> PyResult<Self> {
        let (params, resources, mut track, media) = match config {
            Some(path) => {
                let cfg = ApiConfig::load(&path).map_err(err)?;
                let resources = cfg.resources().map_err(err)?;
                let mut media = MediaIndex::new();
                if let Some(p) = &cfg.paths.media_corpus {
                    media = index_media(p).map_err(err)?.0;
                }
                if let Some(p) = &cfg.paths.remote_media {
                    media.extend_from_remote(&mut ReplayRemoteMedia::new(p)).map_err(err)?;
                }
                (cfg.pipeline.clone(), resources, cfg.track.clone(), media)
            }
            None => {
                let track = TrackConfig::new(Vec::<String>::new(), DEFAULT_KEYWORDS.iter().copied(), 0.0).map_err(err)?;
                (PipelineParams::default(), Resources::default(), track, MediaIndex::new())
            }
        };
        if keywords.is_some() || accounts.is_some() {
            let keywords = keywords.unwrap_or_else(|| track.keywords.iter().cloned().collect());
            let accounts = accounts.unwrap_or_else(|| track.accounts.iter().cloned().collect());
            track = TrackConfig::new(accounts, keywords, 0.0).map_err(err)?;
        }
        let resources = Arc::new(resources);
        let mut inner = act_core::Pipeline::new(params, resources.clone(), track);
        inner.set_media_index(media);
        if let Some(dir) = data_dir {
            let (store, state) = Store::open(&dir).map_err(err)?;
            inner.attach_store(store, state);
        }
        let snapshot = inner.publish().map_err(err)?;
        Ok(Self {
            inner: Mutex::new(inner),
            snapshot: Mutex::new(snapshot),
        })
    }

    /// Feeds one post. Returns a dict whose `outcome` is `assigned`,
    /// `dropped` or `duplicate_id`.
    #[pyo3(signature = (id, created_at, author, text, lon=None, lat=None))]
    #[allow(clippy::too_many_arguments)]
    fn process<'py>(
        &self,
        py: Python<'py>,
        id: String,
        created_at: &str,
        author: String,
        text: String,
        lon: Option<f64>,
        lat: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let coords = match (lon, lat) {
            (Some(lon), Some(lat)) => {
                let c = Coords::new(lon, lat);
                if !c.is_valid() {
                    return Err(PyValueError::new_err(format!("coordinates out of range: ({lon}, {lat})")));
                }
                Some(c)
            }
            (None, None) => None,
            _ => return Err(PyValueError::new_err("lon and lat must be given together")),
        };
        let raw = RawPost {
            id,
            created_at: timestamp("created_at", created_at)?,
            author,
            text,
            coords,
            source_tag: act_core::ingest::SourceTag::Replay,
        };
        let outcome = self.with(|p| p.process(&raw)).map_err(err)?;
        let value = match outcome {
            Outcome::Assigned(a) => serde_json::json!({
                "outcome": "assigned",
                "event_id": a.event_id,
                "created": a.created,
                "similarity": a.similarity,
            }),
            Outcome::Dropped(reason) => serde_json::json!({"outcome": "dropped", "reason": reason}),
            Outcome::DuplicateId => serde_json::json!({"outcome": "duplicate_id"}),
        };
        to_py(py, &value)
    }

    /// Replays a JSON Lines corpus without pacing and publishes. Returns the
    /// number of records read, skipped lines included.
    fn replay(&self, path: PathBuf) -> PyResult<u64> {
        let (snap, read) = self
            .with(|p| -> act_core::Result<(Arc<Snapshot>, u64)> {
                let mut track = p.track().clone();
                track.replay_speed = 0.0;
                let seen = |p: &act_core::Pipeline| p.counters().posts_ingested + p.counters().skipped_records;
                let before = seen(p);
                let snap = p.run(open_corpus(&path, &track)?, None)?;
                Ok((snap, seen(p) - before))
            })
            .map_err(err)?;
        *self.snapshot.lock().expect("snapshot lock") = snap;
        Ok(read)
    }

    /// Publishes pending changes; views read the published snapshot only.
    fn publish(&self) -> PyResult<u64> {
        let snap = self.with(|p| p.publish()).map_err(err)?;
        let seq = snap.seq;
        *self.snapshot.lock().expect("snapshot lock") = snap;
        Ok(seq)
    }

    #[pyo3(signature = (bbox=None, category=None, q=None, since=None, until=None, geotagged=None, limit=100))]
    #[allow(clippy::too_many_arguments)]
    fn events<'py>(
        &self,
        py: Python<'py>,
        bbox: Option<(f64, f64, f64, f64)>,
        category: Option<Vec<String>>,
        q: Option<String>,
        since: Option<&str>,
        until: Option<&str>,
        geotagged: Option<bool>,
        limit: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let query = filter(bbox, category, q, since, until, geotagged, limit)?;
        to_py(py, &analytics::event_summaries(&self.current(), &query).map_err(err)?)
    }

    fn event<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyAny>> {
        let detail = analytics::event_detail(&self.current(), id).ok_or_else(|| PyKeyError::new_err(id.to_string()))?;
        to_py(py, &detail)
    }

    #[pyo3(signature = (id, k=DEFAULT_RELATED_K))]
    fn related<'py>(&self, py: Python<'py>, id: &str, k: usize) -> PyResult<Bound<'py, PyAny>> {
        let list = analytics::related(&self.current(), id, k).ok_or_else(|| PyKeyError::new_err(id.to_string()))?;
        to_py(py, &list)
    }

    #[pyo3(signature = (id, k=DEFAULT_MEDIA_K))]
    fn media<'py>(&self, py: Python<'py>, id: &str, k: usize) -> PyResult<Bound<'py, PyAny>> {
        let list = analytics::media(&self.current(), id, k).ok_or_else(|| PyKeyError::new_err(id.to_string()))?;
        to_py(py, &list)
    }

    /// Trending terms as `[{"term", "count"}]` over the events the filter
    /// selects.
    #[pyo3(signature = (k=DEFAULT_TRENDING_K, bbox=None, category=None, q=None, since=None, until=None, geotagged=None, limit=100))]
    #[allow(clippy::too_many_arguments)]
    fn terms<'py>(
        &self,
        py: Python<'py>,
        k: usize,
        bbox: Option<(f64, f64, f64, f64)>,
        category: Option<Vec<String>>,
        q: Option<String>,
        since: Option<&str>,
        until: Option<&str>,
        geotagged: Option<bool>,
        limit: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let query = filter(bbox, category, q, since, until, geotagged, limit)?;
        to_py(py, &analytics::terms(&self.current(), &query, k).map_err(err)?)
    }

    #[pyo3(signature = (limit=analytics::DEFAULT_AGENCY_LIMIT))]
    fn agencies<'py>(&self, py: Python<'py>, limit: usize) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &analytics::agencies(&self.current(), limit))
    }

    fn health<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &analytics::health(&self.current()))
    }

    /// Every event summary in id order.
    fn export<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &analytics::export_summaries(&self.current()))
    }

    /// Ingest counters of the live pipeline, published or not.
    fn counters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let c = self.with(|p| p.counters().clone());
        to_py(py, &c)
    }
}

fn filter(
    bbox: Option<(f64, f64, f64, f64)>,
    category: Option<Vec<String>>,
    q: Option<String>,
    since: Option<&str>,
    until: Option<&str>,
    geotagged: Option<bool>,
    limit: usize,
) -> PyResult<FilterQuery> {
    let categories = category
        .map(|cs| {
            cs.iter()
                .map(|c| c.parse::<Category>().map_err(|_| PyValueError::new_err(format!("unknown category {c:?}"))))
                .collect::<PyResult<BTreeSet<_>>>()
        })
        .transpose()?;
    let query = FilterQuery {
        bbox: bbox.map(|(min_lon, min_lat, max_lon, max_lat)| BBox {
            min_lon,
            min_lat,
            max_lon,
            max_lat,
        }),
        categories,
        keyword: q,
        since: since.map(|s| timestamp("since", s)).transpose()?,
        until: until.map(|s| timestamp("until", s)).transpose()?,
        geotagged,
        limit,
    };
    query.validate().map_err(err)?;
    Ok(query)
}

#[pymodule]
fn act_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(extract_entities, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_text, m)?)?;
    m.add_class::<Pipeline>()?;
    Ok(())
}
