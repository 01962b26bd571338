//! Feeder: ordered RawPost streams from replay corpora, the synthetic
//! generator, or a pluggable remote source, restricted to tracked accounts
//! and keywords.

use std::collections::{BTreeSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Coords;
use crate::parse::raw_terms;
use crate::synth::SyntheticGenerator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Replay,
    Synthetic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub author: String,
    pub text: String,
    pub coords: Option<Coords>,
    pub source_tag: SourceTag,
}

/// One line of a JSON Lines corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub created_at: String,
    pub user: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinates: Option<[f64; 2]>,
}

impl CorpusRecord {
    pub fn into_raw(self, source_tag: SourceTag) -> std::result::Result<RawPost, String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        let created_at = parse_timestamp(&self.created_at)
            .ok_or_else(|| format!("unparseable created_at {:?}", self.created_at))?;
        let coords = match self.coordinates {
            Some([lon, lat]) => {
                let c = Coords::new(lon, lat);
                if !c.is_valid() {
                    return Err(format!("coordinates out of range: [{lon}, {lat}]"));
                }
                Some(c)
            }
            None => None,
        };
        Ok(RawPost {
            id: self.id,
            created_at,
            author: self.user,
            text: self.text,
            coords,
            source_tag,
        })
    }
}

impl From<&RawPost> for CorpusRecord {
    fn from(raw: &RawPost) -> Self {
        CorpusRecord {
            id: raw.id.clone(),
            created_at: format_timestamp(raw.created_at),
            user: raw.author.clone(),
            text: raw.text.clone(),
            coordinates: raw.coords.map(|c| [c.lon, c.lat]),
        }
    }
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

/// ISO-8601 UTC with a `Z` suffix, e.g. `2013-10-17T04:12:00Z`.
pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true)
}

pub(crate) fn parse_corpus_line(line: &str, tag: SourceTag) -> std::result::Result<RawPost, String> {
    let record: CorpusRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    record.into_raw(tag)
}

/// Disaster terms tracked when the operator supplies none.
pub const DEFAULT_KEYWORDS: &[&str] = &[
    "ambulance", "blaze", "bushfire", "cyclone", "earthquake", "emergency", "evacuate",
    "evacuation", "fire", "flood", "flooding", "hurricane", "smoke", "storm",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackConfig {
    #[serde(default)]
    pub accounts: BTreeSet<String>,
    #[serde(default)]
    pub keywords: BTreeSet<String>,
    /// Replay rate relative to the corpus clock (2.0 is twice as fast); 0
    /// replays without delay.
    #[serde(default)]
    pub replay_speed: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            accounts: BTreeSet::new(),
            keywords: DEFAULT_KEYWORDS.iter().map(|k| k.to_string()).collect(),
            replay_speed: 0.0,
        }
    }
}

impl TrackConfig {
    /// Builds a config, lowercasing accounts and keywords.
    pub fn new<A, K>(accounts: A, keywords: K, replay_speed: f64) -> Result<Self>
    where
        A: IntoIterator,
        A::Item: AsRef<str>,
        K: IntoIterator,
        K::Item: AsRef<str>,
    {
        let cfg = TrackConfig {
            accounts: accounts.into_iter().map(|a| normalize_account(a.as_ref())).collect(),
            keywords: keywords.into_iter().map(|k| k.as_ref().trim().to_lowercase()).collect(),
            replay_speed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.accounts.is_empty() && self.keywords.is_empty() {
            return Err(Error::config("track", "at least one of accounts/keywords must be non-empty"));
        }
        if let Some(k) = self.keywords.iter().find(|k| k.is_empty() || **k != k.to_lowercase()) {
            return Err(Error::config("track.keywords", format!("keyword {k:?} must be non-empty lowercase")));
        }
        if !(self.replay_speed.is_finite() && self.replay_speed >= 0.0) {
            return Err(Error::config("track.replay_speed", "must be a finite number >= 0"));
        }
        Ok(())
    }

    pub fn is_tracked_account(&self, author: &str) -> bool {
        let author = normalize_account(author);
        self.accounts.iter().any(|a| normalize_account(a) == author)
    }
}

fn normalize_account(a: &str) -> String {
    a.trim().trim_start_matches('@').to_lowercase()
}

/// True iff the author is a tracked account or any tracked keyword is a
/// whole token of the text (hashtag bodies included).
pub fn matches_track(raw: &RawPost, cfg: &TrackConfig) -> bool {
    if cfg.is_tracked_account(&raw.author) {
        return true;
    }
    if cfg.keywords.is_empty() {
        return false;
    }
    raw_terms(&raw.text).iter().any(|t| cfg.keywords.contains(t))
}

/// A live-platform source. Only a canned implementation ships.
pub trait RemoteSource: Send {
    /// Next record, or an error string for a record that could not be decoded.
    fn next_post(&mut self) -> Option<std::result::Result<RawPost, String>>;
}

/// Remote source stub returning a fixed sequence.
#[derive(Debug, Clone, Default)]
pub struct CannedRemote {
    posts: VecDeque<RawPost>,
}

impl CannedRemote {
    pub fn new(posts: impl IntoIterator<Item = RawPost>) -> Self {
        Self {
            posts: posts
                .into_iter()
                .map(|mut p| {
                    p.source_tag = SourceTag::Remote;
                    p
                })
                .collect(),
        }
    }
}

impl RemoteSource for CannedRemote {
    fn next_post(&mut self) -> Option<std::result::Result<RawPost, String>> {
        self.posts.pop_front().map(Ok)
    }
}

pub enum SourceSpec {
    Corpus(PathBuf),
    Generator { seed: u64, count: usize },
    Remote(Box<dyn RemoteSource>),
}

impl std::fmt::Debug for SourceSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceSpec::Corpus(p) => f.debug_tuple("Corpus").field(p).finish(),
            SourceSpec::Generator { seed, count } => f
                .debug_struct("Generator")
                .field("seed", seed)
                .field("count", count)
                .finish(),
            SourceSpec::Remote(_) => f.write_str("Remote(..)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipNotice {
    /// 1-based line number for corpora, record ordinal otherwise.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    Post(RawPost),
    Skipped(SkipNotice),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StreamStats {
    pub emitted: u64,
    pub skipped: u64,
    pub untracked: u64,
}

enum Inner {
    Corpus { reader: BufReader<File>, line: u64, buf: String },
    Generator(SyntheticGenerator),
    Remote { source: Box<dyn RemoteSource>, ordinal: u64 },
}

impl Inner {
    fn next_record(&mut self) -> Option<std::result::Result<RawPost, SkipNotice>> {
        match self {
            Inner::Corpus { reader, line, buf } => loop {
                buf.clear();
                match reader.read_line(buf) {
                    Ok(0) => return None,
                    Ok(_) => {
                        *line += 1;
                        let trimmed = buf.trim();
                        if trimmed.is_empty() {
                            continue;
                        }
                        return Some(parse_corpus_line(trimmed, SourceTag::Replay).map_err(|reason| {
                            SkipNotice { line: *line, reason }
                        }));
                    }
                    Err(e) => {
                        *line += 1;
                        return Some(Err(SkipNotice {
                            line: *line,
                            reason: format!("read error: {e}"),
                        }));
                    }
                }
            },
            Inner::Generator(generator) => generator.next().map(Ok),
            Inner::Remote { source, ordinal } => {
                let item = source.next_post()?;
                *ordinal += 1;
                Some(item.map_err(|reason| SkipNotice { line: *ordinal, reason }))
            }
        }
    }
}

/// Streaming reader over a source; yields records in arrival order and
/// silently counts records that do not match the track config.
pub struct PostStream {
    inner: Inner,
    cfg: TrackConfig,
    stats: StreamStats,
    last_emitted_at: Option<DateTime<Utc>>,
}

pub fn open_stream(source: SourceSpec, cfg: &TrackConfig) -> Result<PostStream> {
    cfg.validate()?;
    let inner = match source {
        SourceSpec::Corpus(path) => {
            let file = File::open(&path).map_err(|source| Error::Open { path, source })?;
            Inner::Corpus {
                reader: BufReader::new(file),
                line: 0,
                buf: String::new(),
            }
        }
        SourceSpec::Generator { seed, count } => Inner::Generator(SyntheticGenerator::new(seed, count)),
        SourceSpec::Remote(source) => Inner::Remote { source, ordinal: 0 },
    };
    Ok(PostStream {
        inner,
        cfg: cfg.clone(),
        stats: StreamStats::default(),
        last_emitted_at: None,
    })
}

pub fn open_corpus(path: impl AsRef<Path>, cfg: &TrackConfig) -> Result<PostStream> {
    open_stream(SourceSpec::Corpus(path.as_ref().to_path_buf()), cfg)
}

impl PostStream {
    pub fn stats(&self) -> StreamStats {
        self.stats
    }
}

/// Wall-clock delay before emitting a record stamped `current` after one
/// stamped `previous`. Out-of-order records are not delayed.
pub fn pacing_delay(previous: Option<DateTime<Utc>>, current: DateTime<Utc>, speed: f64) -> StdDuration {
    let Some(previous) = previous else {
        return StdDuration::ZERO;
    };
    if speed <= 0.0 || !speed.is_finite() {
        return StdDuration::ZERO;
    }
    let gap = (current - previous).num_milliseconds();
    if gap <= 0 {
        return StdDuration::ZERO;
    }
    StdDuration::from_secs_f64(gap as f64 / 1000.0 / speed)
}

impl Iterator for PostStream {
    type Item = StreamItem;

    fn next(&mut self) -> Option<StreamItem> {
        loop {
            match self.inner.next_record()? {
                Err(notice) => {
                    tracing::warn!(line = notice.line, reason = %notice.reason, "skipping malformed record");
                    self.stats.skipped += 1;
                    return Some(StreamItem::Skipped(notice));
                }
                Ok(raw) => {
                    if !matches_track(&raw, &self.cfg) {
                        self.stats.untracked += 1;
                        continue;
                    }
                    let delay = pacing_delay(self.last_emitted_at, raw.created_at, self.cfg.replay_speed);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    self.last_emitted_at = Some(raw.created_at);
                    self.stats.emitted += 1;
                    return Some(StreamItem::Post(raw));
                }
            }
        }
    }
}

/// Runs the stream on its own thread behind a bounded queue; the producer
/// blocks while the queue is full. The handle yields the final counts.
pub fn spawn_feeder(stream: PostStream, capacity: usize) -> (Receiver<StreamItem>, JoinHandle<StreamStats>) {
    let (tx, rx) = sync_channel(capacity.max(1));
    let handle = std::thread::Builder::new()
        .name("act-feeder".into())
        .spawn(move || {
            let mut stream = stream;
            for item in stream.by_ref() {
                if tx.send(item).is_err() {
                    break;
                }
            }
            let stats = stream.stats();
            tracing::info!(emitted = stats.emitted, skipped = stats.skipped, untracked = stats.untracked, "feeder finished");
            stats
        })
        .expect("spawn feeder thread");
    (rx, handle)
}
