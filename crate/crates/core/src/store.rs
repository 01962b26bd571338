//! Append-only segment store for posts and event snapshots, and the event
//! filter used by every read path.
//!
//! Segment record layout: 4-byte big-endian payload length, 4-byte
//! big-endian CRC32 of the payload, then the payload (canonical JSON of a
//! [`StoreRecord`]). Segments live in `<dir>/segments/NNNNNN.log` and roll
//! once they reach the configured size.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::annotate::{Category, PostAnnotation};
use crate::cluster::Event;
use crate::error::{Error, Result};
use crate::parse::Post;

pub const SEGMENT_ROLL_BYTES: u64 = 64 * 1024 * 1024;
const HEADER_LEN: usize = 8;
/// Upper bound on a single payload; anything larger is treated as damage.
const MAX_RECORD_BYTES: u32 = 256 * 1024 * 1024;

// ---------------------------------------------------------------------------
// Records

/// A stored post together with its enrichment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredPost {
    pub post: Post,
    pub annotation: PostAnnotation,
    pub event_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum RecordBody {
    Post(Box<StoredPost>),
    EventUpsert(Box<Event>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    #[serde(flatten)]
    pub body: RecordBody,
    pub seq: u64,
}

fn encode_record(record: &StoreRecord) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(record)?;
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|l| *l <= MAX_RECORD_BYTES)
        .ok_or_else(|| Error::resource("store", "record too large"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Writer

pub fn segment_path(dir: &Path, index: u32) -> PathBuf {
    dir.join("segments").join(format!("{index:06}.log"))
}

fn list_segments(dir: &Path) -> Result<Vec<(u32, PathBuf)>> {
    let seg_dir = dir.join("segments");
    if !seg_dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(&seg_dir)? {
        let path = entry?.path();
        let Some(stem) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".log")) else {
            continue;
        };
        if let Ok(i) = stem.parse::<u32>() {
            out.push((i, path));
        }
    }
    out.sort();
    Ok(out)
}

pub struct Store {
    dir: PathBuf,
    segment: u32,
    writer: BufWriter<File>,
    segment_bytes: u64,
    roll_bytes: u64,
    last_seq: u64,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("dir", &self.dir)
            .field("segment", &self.segment)
            .field("last_seq", &self.last_seq)
            .finish()
    }
}

impl Store {
    /// Loads existing state (truncating a torn tail) and opens the last
    /// segment for appending.
    pub fn open(dir: impl AsRef<Path>) -> Result<(Store, StoreState)> {
        Self::open_with_roll(dir, SEGMENT_ROLL_BYTES)
    }

    pub fn open_with_roll(dir: impl AsRef<Path>, roll_bytes: u64) -> Result<(Store, StoreState)> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join("segments"))?;
        let state = load(&dir)?;
        let segment = list_segments(&dir)?.last().map_or(1, |(i, _)| *i);
        let path = segment_path(&dir, segment);
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|source| Error::Open {
            path: path.clone(),
            source,
        })?;
        let segment_bytes = file.metadata()?.len();
        let store = Store {
            dir,
            segment,
            writer: BufWriter::new(file),
            segment_bytes,
            roll_bytes: roll_bytes.max(1),
            last_seq: state.last_seq,
        };
        Ok((store, state))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    fn roll(&mut self) -> std::io::Result<()> {
        self.writer.flush()?;
        self.writer.get_ref().sync_all()?;
        self.segment += 1;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(segment_path(&self.dir, self.segment))?;
        self.writer = BufWriter::new(file);
        self.segment_bytes = 0;
        Ok(())
    }

    fn write_one(&mut self, body: RecordBody, seq: u64) -> Result<()> {
        let bytes = encode_record(&StoreRecord { body, seq })?;
        let last = self.last_seq;
        let io = |source| Error::StoreWrite {
            last_durable: last,
            source,
        };
        if self.segment_bytes > 0 && self.segment_bytes + bytes.len() as u64 > self.roll_bytes {
            self.roll().map_err(io)?;
        }
        self.writer.write_all(&bytes).map_err(io)?;
        self.segment_bytes += bytes.len() as u64;
        Ok(())
    }

    fn sync(&mut self) -> Result<()> {
        let last = self.last_seq;
        let io = |source| Error::StoreWrite {
            last_durable: last,
            source,
        };
        self.writer.flush().map_err(io)?;
        self.writer.get_ref().sync_data().map_err(io)
    }

    /// Appends one record and returns its seq once it is on disk.
    pub fn append(&mut self, body: RecordBody) -> Result<u64> {
        Ok(*self.append_batch(vec![body])?.last().expect("one record"))
    }

    /// Appends records with a single sync; every returned seq is durable.
    pub fn append_batch(&mut self, bodies: Vec<RecordBody>) -> Result<Vec<u64>> {
        let mut seqs = Vec::with_capacity(bodies.len());
        let mut next = self.last_seq;
        for body in bodies {
            next += 1;
            self.write_one(body, next)?;
            seqs.push(next);
        }
        self.sync()?;
        self.last_seq = next;
        Ok(seqs)
    }
}

// ---------------------------------------------------------------------------
// Loading

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoreState {
    /// Posts in append order.
    pub posts: Vec<StoredPost>,
    /// Latest upsert per event id.
    pub events: BTreeMap<String, Event>,
    pub last_seq: u64,
    pub records: u64,
    pub warnings: Vec<String>,
}

impl StoreState {
    fn apply(&mut self, record: StoreRecord) {
        self.last_seq = record.seq;
        self.records += 1;
        match record.body {
            RecordBody::Post(p) => self.posts.push(*p),
            RecordBody::EventUpsert(e) => {
                self.events.insert(e.id.clone(), *e);
            }
        }
    }
}

enum Scan {
    Record(StoreRecord, u64),
    End,
    Torn(String),
}

fn scan_one(buf: &[u8], offset: usize) -> std::result::Result<Scan, String> {
    let rest = &buf[offset..];
    if rest.is_empty() {
        return Ok(Scan::End);
    }
    if rest.len() < HEADER_LEN {
        return Ok(Scan::Torn(format!("{} header bytes", rest.len())));
    }
    let len = u32::from_be_bytes(rest[0..4].try_into().unwrap());
    let crc = u32::from_be_bytes(rest[4..8].try_into().unwrap());
    if len > MAX_RECORD_BYTES {
        return Err(format!("implausible record length {len}"));
    }
    let end = HEADER_LEN + len as usize;
    if rest.len() < end {
        return Ok(Scan::Torn(format!("{} of {} payload bytes", rest.len() - HEADER_LEN, len)));
    }
    let payload = &rest[HEADER_LEN..end];
    if crc32fast::hash(payload) != crc {
        // a complete-length record at the very end of the log can still be
        // a partially persisted write
        if rest.len() == end {
            return Ok(Scan::Torn("checksum mismatch on final record".into()));
        }
        return Err("checksum mismatch".into());
    }
    let record: StoreRecord = serde_json::from_slice(payload).map_err(|e| format!("undecodable record: {e}"))?;
    Ok(Scan::Record(record, end as u64))
}

/// Replays every segment. A torn record at the tail of the last segment is
/// truncated away with a warning; damage anywhere else is fatal.
pub fn load(dir: impl AsRef<Path>) -> Result<StoreState> {
    let dir = dir.as_ref();
    if !dir.exists() {
        return Err(Error::Open {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "store directory does not exist"),
        });
    }
    let segments = list_segments(dir)?;
    let mut state = StoreState::default();
    for (n, (_, path)) in segments.iter().enumerate() {
        let is_last = n + 1 == segments.len();
        let mut buf = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|source| Error::Open {
                path: path.clone(),
                source,
            })?;
        let mut offset = 0usize;
        loop {
            let corrupt = |reason: String| Error::Corrupt {
                segment: path.clone(),
                offset: offset as u64,
                reason,
            };
            match scan_one(&buf, offset).map_err(corrupt)? {
                Scan::End => break,
                Scan::Record(record, used) => {
                    if record.seq <= state.last_seq {
                        return Err(corrupt(format!("seq {} not after {}", record.seq, state.last_seq)));
                    }
                    state.apply(record);
                    offset += used as usize;
                }
                Scan::Torn(reason) => {
                    if !is_last {
                        return Err(corrupt(format!("torn record inside a sealed segment ({reason})")));
                    }
                    let msg = format!(
                        "{}: truncated torn trailing record at offset {offset} ({reason})",
                        path.display()
                    );
                    tracing::warn!("{msg}");
                    OpenOptions::new().write(true).open(path)?.set_len(offset as u64)?;
                    state.warnings.push(msg);
                    break;
                }
            }
        }
    }
    Ok(state)
}

// ---------------------------------------------------------------------------
// Filtering

pub const DEFAULT_LIMIT: usize = 100;
pub const MAX_LIMIT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.min_lon..=self.max_lon).contains(&lon) && (self.min_lat..=self.max_lat).contains(&lat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterQuery {
    pub bbox: Option<BBox>,
    pub categories: Option<BTreeSet<Category>>,
    pub keyword: Option<String>,
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
    pub geotagged: Option<bool>,
    pub limit: usize,
}

impl Default for FilterQuery {
    fn default() -> Self {
        Self {
            bbox: None,
            categories: None,
            keyword: None,
            since: None,
            until: None,
            geotagged: None,
            limit: DEFAULT_LIMIT,
        }
    }
}

impl FilterQuery {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = &self.bbox {
            let finite = [b.min_lon, b.min_lat, b.max_lon, b.max_lat].iter().all(|v| v.is_finite());
            if !finite || b.min_lon > b.max_lon || b.min_lat > b.max_lat {
                return Err(Error::query("bbox", "expected min_lon<=max_lon and min_lat<=max_lat"));
            }
            if b.min_lon < -180.0 || b.max_lon > 180.0 || b.min_lat < -90.0 || b.max_lat > 90.0 {
                return Err(Error::query("bbox", "coordinates out of range"));
            }
        }
        if let (Some(s), Some(u)) = (self.since, self.until) {
            if s > u {
                return Err(Error::query("since", "since must not be after until"));
            }
        }
        if let Some(k) = &self.keyword {
            if k.is_empty() || *k != k.to_lowercase() {
                return Err(Error::query("q", "keyword must be a non-empty lowercase term"));
            }
        }
        if self.limit == 0 || self.limit > MAX_LIMIT {
            return Err(Error::query("limit", format!("must be between 1 and {MAX_LIMIT}")));
        }
        Ok(())
    }

    /// True when the bounding box is present but ignored because the query
    /// asks for events without geotags.
    pub fn bbox_ignored(&self) -> bool {
        self.bbox.is_some() && self.geotagged == Some(false)
    }

    pub fn matches(&self, e: &Event) -> bool {
        if let Some(g) = self.geotagged {
            if e.location.is_some() != g {
                return false;
            }
        }
        if let Some(b) = &self.bbox {
            if self.geotagged != Some(false) {
                match &e.location {
                    Some(l) if b.contains(l.lon, l.lat) => {}
                    _ => return false,
                }
            }
        }
        if let Some(cats) = &self.categories {
            if !cats.contains(&e.category) {
                return false;
            }
        }
        if let Some(k) = &self.keyword {
            if !e.term_counts.contains_key(k) {
                return false;
            }
        }
        if self.since.is_some_and(|s| e.last_seen < s) {
            return false;
        }
        if self.until.is_some_and(|u| e.first_seen > u) {
            return false;
        }
        true
    }
}

/// Matching events, newest `last_seen` first (ties by id), truncated to the
/// query limit.
pub fn query_events<'a>(q: &FilterQuery, events: impl IntoIterator<Item = &'a Event>) -> Result<Vec<&'a Event>> {
    q.validate()?;
    let mut out: Vec<&Event> = events.into_iter().filter(|e| q.matches(e)).collect();
    out.sort_by(|a, b| b.last_seen.cmp(&a.last_seen).then_with(|| a.id.cmp(&b.id)));
    out.truncate(q.limit);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{EventLocation, EventSentiment, EventTallies};
    use crate::cluster::TermVector;

    fn event(id: &str, hour: i64, cat: Category, loc: Option<(f64, f64)>, terms: &[&str]) -> Event {
        let t = DateTime::from_timestamp(1_381_982_400 + hour * 3600, 0).unwrap();
        Event {
            id: id.into(),
            ordinal: 0,
            member_ids: vec![id.into()],
            unique_texts: BTreeMap::new(),
            centroid: TermVector::new(),
            vector_sum: TermVector::new(),
            first_seen: t,
            last_seen: t,
            term_counts: terms.iter().map(|t| (t.to_string(), 1)).collect(),
            location: loc.map(|(lon, lat)| EventLocation {
                lon,
                lat,
                place_name: "p".into(),
                confidence: 1.0,
            }),
            category: cat,
            sentiment: EventSentiment::default(),
            media: vec![],
            tallies: EventTallies::default(),
        }
    }

    fn ids(v: Vec<&Event>) -> Vec<&str> {
        v.into_iter().map(|e| e.id.as_str()).collect()
    }

    fn sydney_box() -> BBox {
        BBox {
            min_lon: 150.0,
            min_lat: -34.5,
            max_lon: 152.0,
            max_lat: -33.0,
        }
    }

    #[test]
    fn geotag_toggle_examples() {
        let events = vec![
            event("in", 1, Category::Fire, Some((151.2, -33.9)), &["fire"]),
            event("out", 2, Category::Fire, Some((144.9, -37.8)), &["fire"]),
            event("none", 3, Category::Fire, None, &["fire"]),
        ];
        let q = FilterQuery {
            bbox: Some(sydney_box()),
            geotagged: Some(true),
            ..Default::default()
        };
        assert_eq!(ids(query_events(&q, &events).unwrap()), vec!["in"]);

        let q = FilterQuery {
            bbox: Some(sydney_box()),
            geotagged: Some(false),
            ..Default::default()
        };
        assert!(q.bbox_ignored());
        assert_eq!(ids(query_events(&q, &events).unwrap()), vec!["none"]);

        let q = FilterQuery {
            bbox: Some(sydney_box()),
            ..Default::default()
        };
        assert_eq!(ids(query_events(&q, &events).unwrap()), vec!["in"]);
    }

    #[test]
    fn keyword_category_and_time() {
        let events = vec![
            event("a", 1, Category::Fire, None, &["fire", "sydney"]),
            event("b", 2, Category::Flood, None, &["flood", "sydney"]),
            event("c", 3, Category::Fire, None, &["smoke"]),
        ];
        let q = FilterQuery {
            keyword: Some("fire".into()),
            ..Default::default()
        };
        assert_eq!(ids(query_events(&q, &events).unwrap()), vec!["a"]);

        let q = FilterQuery {
            categories: Some([Category::Fire].into()),
            keyword: Some("sydney".into()),
            ..Default::default()
        };
        assert_eq!(ids(query_events(&q, &events).unwrap()), vec!["a"]);

        let t = |h: i64| DateTime::from_timestamp(1_381_982_400 + h * 3600, 0).unwrap();
        let q = FilterQuery {
            since: Some(t(2)),
            until: Some(t(3)),
            ..Default::default()
        };
        assert_eq!(ids(query_events(&q, &events).unwrap()), vec!["c", "b"]);

        let q = FilterQuery { limit: 1, ..Default::default() };
        assert_eq!(ids(query_events(&q, &events).unwrap()), vec!["c"]);
    }

    #[test]
    fn invalid_queries_name_the_field() {
        let bad = |q: FilterQuery, field: &str| match q.validate() {
            Err(Error::InvalidQuery { field: f, .. }) => assert_eq!(f, field),
            other => panic!("expected invalid {field}, got {other:?}"),
        };
        let mut b = sydney_box();
        b.min_lon = 153.0;
        bad(FilterQuery { bbox: Some(b), ..Default::default() }, "bbox");
        let t = DateTime::from_timestamp(0, 0).unwrap();
        bad(
            FilterQuery {
                since: Some(t + chrono::Duration::hours(1)),
                until: Some(t),
                ..Default::default()
            },
            "since",
        );
        bad(FilterQuery { limit: 1001, ..Default::default() }, "limit");
        bad(FilterQuery { limit: 0, ..Default::default() }, "limit");
        bad(FilterQuery { keyword: Some("Fire".into()), ..Default::default() }, "q");
    }

    fn upsert(id: &str) -> RecordBody {
        RecordBody::EventUpsert(Box::new(event(id, 0, Category::Fire, None, &["fire"])))
    }

    #[test]
    fn record_wire_shape() {
        let r = StoreRecord { body: upsert("e"), seq: 7 };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["kind"], "event_upsert");
        assert_eq!(v["seq"], 7);
        assert_eq!(v["payload"]["id"], "e");
        let bytes = encode_record(&r).unwrap();
        let len = u32::from_be_bytes(bytes[0..4].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 8 + len);
        assert_eq!(u32::from_be_bytes(bytes[4..8].try_into().unwrap()), crc32fast::hash(&bytes[8..]));
    }

    #[test]
    fn append_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let (mut store, state) = Store::open(dir.path()).unwrap();
        assert_eq!(state, StoreState::default());
        assert_eq!(store.append(upsert("a")).unwrap(), 1);
        assert_eq!(store.append_batch(vec![upsert("b"), upsert("a")]).unwrap(), vec![2, 3]);
        drop(store);

        let (mut store, state) = Store::open(dir.path()).unwrap();
        assert_eq!(state.last_seq, 3);
        assert_eq!(state.records, 3);
        assert_eq!(state.events.keys().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(store.append(upsert("c")).unwrap(), 4);
    }

    #[test]
    fn segments_roll() {
        let dir = tempfile::tempdir().unwrap();
        let (mut store, _) = Store::open_with_roll(dir.path(), 1500).unwrap();
        for i in 0..10 {
            store.append(upsert(&format!("e{i}"))).unwrap();
        }
        let segs = list_segments(dir.path()).unwrap();
        assert!(segs.len() > 1, "{segs:?}");
        assert_eq!(segs[0].1, segment_path(dir.path(), 1));
        let state = load(dir.path()).unwrap();
        assert_eq!((state.records, state.last_seq), (10, 10));
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let (mut store, _) = Store::open(dir.path()).unwrap();
        for i in 0..5 {
            store.append(upsert(&format!("e{i}"))).unwrap();
        }
        drop(store);
        let path = segment_path(dir.path(), 1);
        let len = fs::metadata(&path).unwrap().len();
        OpenOptions::new().write(true).open(&path).unwrap().set_len(len - 3).unwrap();

        let state = load(dir.path()).unwrap();
        assert_eq!(state.records, 4);
        assert_eq!(state.warnings.len(), 1);
        // the truncation is persisted, a second load is clean
        let again = load(dir.path()).unwrap();
        assert_eq!(again.records, 4);
        assert!(again.warnings.is_empty());
    }

    #[test]
    fn mid_segment_corruption_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let (mut store, _) = Store::open(dir.path()).unwrap();
        for i in 0..3 {
            store.append(upsert(&format!("e{i}"))).unwrap();
        }
        drop(store);
        let path = segment_path(dir.path(), 1);
        let mut bytes = fs::read(&path).unwrap();
        bytes[12] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn empty_dir_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(load(dir.path()).unwrap(), StoreState::default());
        assert!(load(dir.path().join("missing")).is_err());
    }
}
