//! Post parsing: tokenization, entity extraction and rule-driven noise filtering.
//!
//! A [`Post`] is the normalized form of a [`RawPost`]. Tokens are the
//! lowercase alphanumeric runs of the URL-stripped text with the shipped
//! stopword list applied; hashtag and mention bodies are kept as tokens.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use chrono::{DateTime, Duration, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Coords;
use crate::ingest::{RawPost, TrackConfig};

const SHIPPED_STOPWORDS: &str = include_str!("../resources/stopwords.txt");
const SHIPPED_NOISE_RULES: &str = include_str!("../resources/noise_rules.json");

/// Tokens shorter than this (in chars) are dropped.
const MIN_TOKEN_CHARS: usize = 2;

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)https?://\S+").unwrap())
}

fn entity_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[^\p{Alphabetic}\p{Nd}_#@])([#@])([\p{Alphabetic}\p{Nd}_]+)").unwrap())
}

fn retweet_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?i:rt)\s+@([\p{Alphabetic}\p{Nd}_]+):?").unwrap())
}

fn strip_urls(text: &str) -> String {
    url_re().replace_all(text, " ").into_owned()
}

/// Lowercase alphanumeric runs of `text`, without URLs. No stopword or
/// length filtering; this is the view used for keyword tracking.
pub fn raw_terms(text: &str) -> Vec<String> {
    split_terms(&strip_urls(text))
}

fn split_terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_lowercase())
        .collect()
}

/// Lowercased, URL-stripped, whitespace-collapsed text.
pub fn normalize_text(text: &str) -> String {
    strip_urls(text)
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    stopwords: HashSet<String>,
}

impl Tokenizer {
    pub fn new<I, S>(stopwords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let stopwords = stopwords
            .into_iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        Self { stopwords }
    }

    /// Parses a stopword list, one term per line.
    pub fn from_list(list: &str) -> Self {
        Self::new(list.lines())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let list = std::fs::read_to_string(path).map_err(|source| Error::Open {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_list(&list))
    }

    /// The stopword list checked into the repository.
    pub fn shipped() -> &'static Tokenizer {
        static TOKENIZER: OnceLock<Tokenizer> = OnceLock::new();
        TOKENIZER.get_or_init(|| Tokenizer::from_list(SHIPPED_STOPWORDS))
    }

    pub fn is_stopword(&self, term: &str) -> bool {
        self.stopwords.contains(term)
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        raw_terms(text)
            .into_iter()
            .filter(|t| t.chars().count() >= MIN_TOKEN_CHARS && !self.stopwords.contains(t))
            .collect()
    }
}

/// Tokenizes with the shipped stopword list.
pub fn tokenize(text: &str) -> Vec<String> {
    Tokenizer::shipped().tokenize(text)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entities {
    pub hashtags: Vec<String>,
    pub mentions: Vec<String>,
    pub urls: Vec<String>,
    pub is_retweet: bool,
    pub retweet_of: Option<String>,
}

/// Hashtag and mention bodies are lowercased; URLs keep their original case.
pub fn extract_entities(text: &str) -> Entities {
    let urls: Vec<String> = url_re()
        .find_iter(text)
        .map(|m| m.as_str().to_string())
        .collect();
    let stripped = strip_urls(text);
    let mut hashtags = Vec::new();
    let mut mentions = Vec::new();
    for cap in entity_re().captures_iter(&stripped) {
        let body = cap[2].to_lowercase();
        match &cap[1] {
            "#" => hashtags.push(body),
            _ => mentions.push(body),
        }
    }
    let retweet_of = retweet_re()
        .captures(text.trim_start())
        .map(|c| c[1].to_lowercase());
    Entities {
        hashtags,
        mentions,
        urls,
        is_retweet: retweet_of.is_some(),
        retweet_of,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub author: String,
    pub text: String,
    pub norm_text: String,
    pub tokens: Vec<String>,
    pub hashtags: Vec<String>,
    pub mentions: Vec<String>,
    pub urls: Vec<String>,
    pub is_retweet: bool,
    pub retweet_of: Option<String>,
    pub coords: Option<Coords>,
    pub is_agency: bool,
}

impl Post {
    pub fn parse(raw: &RawPost, tokenizer: &Tokenizer, track: &TrackConfig) -> Post {
        let entities = extract_entities(&raw.text);
        Post {
            id: raw.id.clone(),
            created_at: raw.created_at,
            author: raw.author.clone(),
            text: raw.text.clone(),
            norm_text: normalize_text(&raw.text),
            tokens: tokenizer.tokenize(&raw.text),
            hashtags: entities.hashtags,
            mentions: entities.mentions,
            urls: entities.urls,
            is_retweet: entities.is_retweet,
            retweet_of: entities.retweet_of,
            coords: raw.coords,
            is_agency: track.is_tracked_account(&raw.author),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReason {
    Spam,
    Joke,
    Song,
    Empty,
    DuplicateFlood,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseVerdict {
    pub keep: bool,
    pub reason: NoiseReason,
}

impl NoiseVerdict {
    pub const KEEP: NoiseVerdict = NoiseVerdict {
        keep: true,
        reason: NoiseReason::None,
    };

    pub fn drop(reason: NoiseReason) -> Self {
        debug_assert_ne!(reason, NoiseReason::None);
        NoiseVerdict { keep: false, reason }
    }
}

fn default_max_urls() -> usize {
    3
}

fn default_flood_window() -> u64 {
    600
}

/// Phrase lists per noise class plus numeric thresholds. Expletives have no
/// class of their own and are never a reason to drop a post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRules {
    #[serde(default)]
    pub spam: Vec<String>,
    #[serde(default)]
    pub joke: Vec<String>,
    #[serde(default)]
    pub song: Vec<String>,
    #[serde(default = "default_max_urls")]
    pub max_urls: usize,
    #[serde(default = "default_flood_window")]
    pub flood_window_secs: u64,
}

impl Default for NoiseRules {
    fn default() -> Self {
        Self::shipped()
    }
}

impl NoiseRules {
    pub fn shipped() -> Self {
        serde_json::from_str(SHIPPED_NOISE_RULES).expect("shipped noise rules are valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|source| Error::Open {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&body).map_err(|e| Error::resource(path.display().to_string(), e))
    }
}

/// Word-boundary form used for phrase matching: terms joined by single
/// spaces and padded on both sides.
fn phrase_key(text: &str) -> String {
    let terms = split_terms(text);
    if terms.is_empty() {
        return String::new();
    }
    format!(" {} ", terms.join(" "))
}

#[derive(Debug, Clone)]
struct CompiledPhrases {
    spam: Vec<String>,
    joke: Vec<String>,
    song: Vec<String>,
}

impl CompiledPhrases {
    fn new(rules: &NoiseRules) -> Self {
        let compile = |list: &[String]| {
            list.iter()
                .map(|p| phrase_key(p))
                .filter(|k| !k.is_empty())
                .collect()
        };
        Self {
            spam: compile(&rules.spam),
            joke: compile(&rules.joke),
            song: compile(&rules.song),
        }
    }
}

/// Noise classifier with the duplicate-flood memory of recent
/// `(author, norm_text)` pairs. Owned by the single pipeline thread.
#[derive(Debug, Clone)]
pub struct NoiseFilter {
    rules: NoiseRules,
    phrases: CompiledPhrases,
    seen: HashMap<(String, String), DateTime<Utc>>,
    newest: Option<DateTime<Utc>>,
}

/// Seen-set size above which stale entries are evicted.
const SEEN_PRUNE_THRESHOLD: usize = 8192;

impl NoiseFilter {
    pub fn new(rules: NoiseRules) -> Self {
        Self {
            phrases: CompiledPhrases::new(&rules),
            rules,
            seen: HashMap::new(),
            newest: None,
        }
    }

    pub fn rules(&self) -> &NoiseRules {
        &self.rules
    }

    fn flood_window(&self) -> Duration {
        Duration::seconds(self.rules.flood_window_secs.min(i64::MAX as u64) as i64)
    }

    /// Checks run in order: empty, spam, joke, song, duplicate flood. Posts
    /// reaching the flood check are remembered whatever its outcome, so a
    /// repeated message keeps being dropped while it is re-sent within the
    /// window.
    pub fn classify(&mut self, post: &Post) -> NoiseVerdict {
        if post.tokens.is_empty() {
            return NoiseVerdict::drop(NoiseReason::Empty);
        }
        let key = phrase_key(&post.norm_text);
        let hit = |phrases: &[String]| phrases.iter().any(|p| key.contains(p.as_str()));
        if post.urls.len() > self.rules.max_urls || hit(&self.phrases.spam) {
            return NoiseVerdict::drop(NoiseReason::Spam);
        }
        if hit(&self.phrases.joke) {
            return NoiseVerdict::drop(NoiseReason::Joke);
        }
        if hit(&self.phrases.song) {
            return NoiseVerdict::drop(NoiseReason::Song);
        }

        let window = self.flood_window();
        let seen_key = (post.author.to_lowercase(), post.norm_text.clone());
        let flooded = self
            .seen
            .get(&seen_key)
            .is_some_and(|prev| (post.created_at - *prev).abs() <= window);
        self.seen.insert(seen_key, post.created_at);
        self.newest = Some(self.newest.map_or(post.created_at, |n| n.max(post.created_at)));
        if self.seen.len() > SEEN_PRUNE_THRESHOLD {
            self.prune();
        }
        if flooded {
            NoiseVerdict::drop(NoiseReason::DuplicateFlood)
        } else {
            NoiseVerdict::KEEP
        }
    }

    fn prune(&mut self) {
        if let Some(newest) = self.newest {
            let horizon = newest - self.flood_window();
            self.seen.retain(|_, t| *t >= horizon);
        }
    }
}
