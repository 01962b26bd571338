//! Media Finder: an image index over local and remote corpora, and event
//! media ranking by content, location and time.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::annotate::CategoryRules;
use crate::cluster::{span_gap_hours, Event};
use crate::error::{Error, Result};
use crate::geo::Coords;
use crate::ingest::parse_timestamp;
use crate::parse::{tokenize, Post};

const GRID_DEGREES: f64 = 0.5;
const WINDOW_PAD_HOURS: i64 = 12;
const QUERY_TREND_TERMS: usize = 5;
const GEO_SCALE_KM: f64 = 25.0;
const TIME_SCALE_HOURS: f64 = 12.0;
pub const DEFAULT_MEDIA_K: usize = 12;
const IMAGE_EXTENSIONS: &[&str] = &[".jpg", ".jpeg", ".png", ".gif"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaOrigin {
    PostEmbedded,
    LocalCorpus,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaItem {
    pub id: String,
    pub url: String,
    pub caption_tokens: Vec<String>,
    pub coords: Option<Coords>,
    pub created_at: DateTime<Utc>,
    pub origin: MediaOrigin,
}

#[derive(Debug, Deserialize)]
struct MediaRecord {
    id: String,
    url: String,
    #[serde(default)]
    caption: String,
    created_at: String,
    #[serde(default)]
    coordinates: Option<[f64; 2]>,
}

fn parse_media_line(line: &str, origin: MediaOrigin) -> std::result::Result<MediaItem, String> {
    let r: MediaRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if r.id.trim().is_empty() {
        return Err("empty id".into());
    }
    let created_at = parse_timestamp(&r.created_at).ok_or_else(|| format!("unparseable created_at {:?}", r.created_at))?;
    let coords = match r.coordinates {
        Some([lon, lat]) => {
            let c = Coords::new(lon, lat);
            if !c.is_valid() {
                return Err(format!("coordinates out of range: [{lon}, {lat}]"));
            }
            Some(c)
        }
        None => None,
    };
    Ok(MediaItem {
        id: r.id,
        url: r.url,
        caption_tokens: tokenize(&r.caption),
        coords,
        created_at,
        origin,
    })
}

fn grid_cell(c: Coords) -> (i32, i32) {
    ((c.lon / GRID_DEGREES).floor() as i32, (c.lat / GRID_DEGREES).floor() as i32)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IndexReport {
    pub indexed: u64,
    pub skipped: u64,
}

/// Searchable media, indexed by caption token, timestamp and 0.5° cell.
#[derive(Debug, Clone, Default)]
pub struct MediaIndex {
    items: Vec<MediaItem>,
    by_id: HashMap<String, usize>,
    by_token: BTreeMap<String, Vec<usize>>,
    by_time: Vec<usize>,
    by_cell: BTreeMap<(i32, i32), Vec<usize>>,
    version: u64,
}

impl MediaIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Bumped on every change; keys cached query results.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn get(&self, id: &str) -> Option<&MediaItem> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    /// Adds an item; returns false if its id is already indexed.
    pub fn insert(&mut self, item: MediaItem) -> bool {
        if self.by_id.contains_key(&item.id) {
            return false;
        }
        let i = self.items.len();
        self.by_id.insert(item.id.clone(), i);
        for t in item.caption_tokens.iter().collect::<BTreeSet<_>>() {
            self.by_token.entry(t.clone()).or_default().push(i);
        }
        if let Some(c) = item.coords {
            self.by_cell.entry(grid_cell(c)).or_default().push(i);
        }
        let key = (item.created_at, item.id.clone());
        let pos = self
            .by_time
            .partition_point(|&j| (self.items[j].created_at, &self.items[j].id) < (key.0, &key.1));
        self.items.push(item);
        self.by_time.insert(pos, i);
        self.version += 1;
        true
    }

    /// Indexes a JSON Lines stream; malformed lines and duplicate ids are
    /// skipped and counted.
    pub fn extend_from_reader(&mut self, reader: impl BufRead, origin: MediaOrigin) -> Result<IndexReport> {
        let mut report = IndexReport::default();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match parse_media_line(line.trim(), origin) {
                Ok(item) => {
                    let id = item.id.clone();
                    if self.insert(item) {
                        report.indexed += 1;
                    } else {
                        tracing::warn!(line = n + 1, %id, "skipping duplicate media id");
                        report.skipped += 1;
                    }
                }
                Err(reason) => {
                    tracing::warn!(line = n + 1, %reason, "skipping malformed media record");
                    report.skipped += 1;
                }
            }
        }
        Ok(report)
    }

    /// Pulls everything a remote source currently offers.
    pub fn extend_from_remote(&mut self, source: &mut dyn RemoteMediaSource) -> Result<IndexReport> {
        let mut report = IndexReport::default();
        for item in source.fetch()? {
            if self.insert(item) {
                report.indexed += 1;
            } else {
                report.skipped += 1;
            }
        }
        Ok(report)
    }

    /// Items with `start <= created_at <= end`, oldest first.
    pub fn in_window(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> impl Iterator<Item = &MediaItem> {
        let lo = self.by_time.partition_point(|&j| self.items[j].created_at < start);
        let hi = self.by_time.partition_point(|&j| self.items[j].created_at <= end);
        self.by_time[lo..hi.max(lo)].iter().map(|&j| &self.items[j])
    }

    pub fn with_token<'a>(&'a self, token: &str) -> impl Iterator<Item = &'a MediaItem> + 'a {
        self.by_token.get(token).into_iter().flatten().map(|&j| &self.items[j])
    }

    pub fn in_cell_of(&self, point: Coords) -> impl Iterator<Item = &MediaItem> {
        self.by_cell.get(&grid_cell(point)).into_iter().flatten().map(|&j| &self.items[j])
    }

    /// Deterministic JSON export of items and secondary indexes, keyed by id.
    pub fn dump(&self) -> serde_json::Value {
        let ids = |v: &Vec<usize>| {
            let mut ids: Vec<&str> = v.iter().map(|&j| self.items[j].id.as_str()).collect();
            ids.sort_unstable();
            ids
        };
        let mut items: Vec<&MediaItem> = self.items.iter().collect();
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let tokens: BTreeMap<&str, Vec<&str>> = self.by_token.iter().map(|(t, v)| (t.as_str(), ids(v))).collect();
        let cells: BTreeMap<String, Vec<&str>> = self
            .by_cell
            .iter()
            .map(|((x, y), v)| (format!("{x},{y}"), ids(v)))
            .collect();
        let time: Vec<&str> = self.by_time.iter().map(|&j| self.items[j].id.as_str()).collect();
        serde_json::json!({ "items": items, "tokens": tokens, "cells": cells, "time": time })
    }
}

pub fn index_media(path: impl AsRef<Path>) -> Result<(MediaIndex, IndexReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut index = MediaIndex::new();
    let report = index.extend_from_reader(BufReader::new(file), MediaOrigin::LocalCorpus)?;
    Ok((index, report))
}

/// A photo-sharing service. Only a replay stub ships.
pub trait RemoteMediaSource: Send {
    fn fetch(&mut self) -> Result<Vec<MediaItem>>;
}

/// Remote stub that serves a second media corpus file, once.
#[derive(Debug, Clone)]
pub struct ReplayRemoteMedia {
    path: PathBuf,
    drained: bool,
}

impl ReplayRemoteMedia {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            drained: false,
        }
    }
}

impl RemoteMediaSource for ReplayRemoteMedia {
    fn fetch(&mut self) -> Result<Vec<MediaItem>> {
        if self.drained {
            return Ok(Vec::new());
        }
        let file = File::open(&self.path).map_err(|source| Error::Open {
            path: self.path.clone(),
            source,
        })?;
        let mut scratch = MediaIndex::new();
        scratch.extend_from_reader(BufReader::new(file), MediaOrigin::Remote)?;
        self.drained = true;
        Ok(scratch.items)
    }
}

pub fn is_image_url(url: &str) -> bool {
    let path = url.split(['?', '#']).next().unwrap_or(url).to_lowercase();
    IMAGE_EXTENSIONS.iter().any(|ext| path.ends_with(ext))
}

/// Image links in a post become media items stamped with the post's time
/// and coordinates. Ids derive from the URL so reposts deduplicate.
pub fn embedded_media(post: &Post) -> Vec<MediaItem> {
    post.urls
        .iter()
        .filter(|u| is_image_url(u))
        .map(|u| MediaItem {
            id: format!("emb:{u}"),
            url: u.clone(),
            caption_tokens: post.tokens.clone(),
            coords: post.coords,
            created_at: post.created_at,
            origin: MediaOrigin::PostEmbedded,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MediaQuery {
    pub terms: BTreeSet<String>,
    pub center: Option<Coords>,
    pub window: (DateTime<Utc>, DateTime<Utc>),
    pub span: (DateTime<Utc>, DateTime<Utc>),
}

impl MediaQuery {
    /// Top trending terms of the event plus its category keywords, centred
    /// on the resolved location, 12 hours either side of its span.
    pub fn for_event(e: &Event, rules: &CategoryRules) -> Self {
        let mut terms: BTreeSet<String> = e.top_terms(QUERY_TREND_TERMS).into_iter().map(|(t, _)| t).collect();
        terms.extend(rules.keywords(e.category).map(str::to_string));
        let pad = Duration::hours(WINDOW_PAD_HOURS);
        MediaQuery {
            terms,
            center: e.location.as_ref().map(|l| l.coords()),
            window: (e.first_seen - pad, e.last_seen + pad),
            span: (e.first_seen, e.last_seen),
        }
    }

    pub fn in_window(&self, t: DateTime<Utc>) -> bool {
        self.window.0 <= t && t <= self.window.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaWeights {
    pub content: f64,
    pub geo: f64,
    pub time: f64,
    pub cutoff: f64,
}

impl Default for MediaWeights {
    fn default() -> Self {
        Self {
            content: 0.5,
            geo: 0.3,
            time: 0.2,
            cutoff: 0.1,
        }
    }
}

pub fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn score_item(item: &MediaItem, q: &MediaQuery, w: &MediaWeights) -> f64 {
    let caption: BTreeSet<&str> = item.caption_tokens.iter().map(String::as_str).collect();
    let terms: BTreeSet<&str> = q.terms.iter().map(String::as_str).collect();
    let content = jaccard(&caption, &terms);
    let geo = match (item.coords, q.center) {
        (Some(a), Some(b)) => (-a.distance_km(&b) / GEO_SCALE_KM).exp(),
        _ => 0.0,
    };
    let gap = span_gap_hours((item.created_at, item.created_at), q.span);
    let time = (-gap / TIME_SCALE_HOURS).exp();
    w.content * content + w.geo * geo + w.time * time
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedMedia {
    #[serde(flatten)]
    pub item: MediaItem,
    /// Absent for media embedded in member posts, which are listed first.
    pub score: Option<f64>,
}

/// Embedded media of the member posts (deduplicated, in member order)
/// followed by index items inside the query window scoring at least the
/// cutoff, best first with older items winning ties. At most `k` entries.
pub fn find_media<'a>(
    e: &Event,
    members: impl IntoIterator<Item = &'a Post>,
    index: &MediaIndex,
    rules: &CategoryRules,
    weights: &MediaWeights,
    k: usize,
) -> Vec<RankedMedia> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for post in members {
        for item in embedded_media(post) {
            if seen.insert(item.id.clone()) {
                out.push(RankedMedia { item, score: None });
            }
        }
    }
    let q = MediaQuery::for_event(e, rules);
    let mut scored: Vec<(f64, &MediaItem)> = index
        .in_window(q.window.0, q.window.1)
        .map(|item| (score_item(item, &q, weights), item))
        .filter(|(s, _)| *s >= weights.cutoff)
        .collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.created_at.cmp(&b.1.created_at))
            .then_with(|| a.1.id.cmp(&b.1.id))
    });
    out.extend(scored.into_iter().map(|(s, item)| RankedMedia {
        item: item.clone(),
        score: Some(s),
    }));
    out.truncate(k);
    out
}
