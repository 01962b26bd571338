//! Single-pass incremental event clustering.
//!
//! Each kept post becomes a TF-IDF vector against the corpus statistics as
//! they stand when it arrives. It joins the most similar event active within
//! the time window if the cosine to that event's centroid reaches the
//! threshold, otherwise it founds a new event. Events never merge.

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::annotate::{Category, EventLocation, EventSentiment, EventTallies, PostAnnotation};
use crate::geo::haversine_km;
use crate::parse::Post;

pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_WINDOW_HOURS: f64 = 6.0;

/// Sparse non-negative term weights, iterated in term order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermVector(BTreeMap<String, f64>);

impl TermVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops zero and non-finite weights.
    pub fn from_weights(weights: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self(
            weights
                .into_iter()
                .filter(|(_, w)| w.is_finite() && *w > 0.0)
                .collect(),
        )
    }

    pub fn get(&self, term: &str) -> f64 {
        self.0.get(term).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> TermVector {
        let n = self.norm();
        if n == 0.0 {
            return TermVector::new();
        }
        TermVector(self.0.iter().map(|(k, v)| (k.clone(), v / n)).collect())
    }

    pub fn add_assign(&mut self, other: &TermVector) {
        for (k, v) in &other.0 {
            *self.0.entry(k.clone()).or_insert(0.0) += v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: u64,
    pub doc_freq: HashMap<String, u64>,
}

impl CorpusStats {
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0);
        ((1.0 + self.doc_count as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    pub fn observe(&mut self, tokens: &[String]) {
        self.doc_count += 1;
        let distinct: HashSet<&String> = tokens.iter().collect();
        for t in distinct {
            *self.doc_freq.entry(t.clone()).or_insert(0) += 1;
        }
    }
}

/// `tf(t) * (ln((1+N)/(1+df(t))) + 1)`, L2-normalized.
pub fn tfidf_vector(tokens: &[String], stats: &CorpusStats) -> TermVector {
    let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
    for t in tokens {
        *tf.entry(t.as_str()).or_insert(0) += 1;
    }
    TermVector::from_weights(tf.into_iter().map(|(t, n)| (t.to_string(), n as f64 * stats.idf(t)))).normalized()
}

/// Cosine similarity clamped to `[0, 1]`; 0 when either side is empty.
pub fn cosine(a: &TermVector, b: &TermVector) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: f64 = small.iter().map(|(t, w)| w * large.get(t)).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniqueText {
    /// Members carrying this normalized text.
    pub count: u64,
    /// Newest member with this text.
    pub representative: String,
    pub newest_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    /// Creation ordinal; lower is older.
    pub ordinal: u64,
    pub member_ids: Vec<String>,
    pub unique_texts: BTreeMap<String, UniqueText>,
    pub centroid: TermVector,
    /// Unnormalized sum of member vectors.
    pub vector_sum: TermVector,
    pub first_seen: DateTime<Utc>,
    pub last_seen: DateTime<Utc>,
    pub term_counts: BTreeMap<String, u64>,
    pub location: Option<EventLocation>,
    pub category: Category,
    pub sentiment: EventSentiment,
    /// Ids of media embedded in member posts.
    pub media: Vec<String>,
    pub tallies: EventTallies,
}

impl Event {
    fn found(id: String, ordinal: u64, post: &Post, vector: TermVector) -> Self {
        let mut e = Event {
            id,
            ordinal,
            member_ids: Vec::new(),
            unique_texts: BTreeMap::new(),
            centroid: TermVector::new(),
            vector_sum: TermVector::new(),
            first_seen: post.created_at,
            last_seen: post.created_at,
            term_counts: BTreeMap::new(),
            location: None,
            category: Category::Other,
            sentiment: EventSentiment::default(),
            media: Vec::new(),
            tallies: EventTallies::default(),
        };
        e.absorb(post, &vector);
        e
    }

    fn absorb(&mut self, post: &Post, vector: &TermVector) {
        self.member_ids.push(post.id.clone());
        self.vector_sum.add_assign(vector);
        self.centroid = self.vector_sum.normalized();
        self.first_seen = self.first_seen.min(post.created_at);
        self.last_seen = self.last_seen.max(post.created_at);
        for t in &post.tokens {
            *self.term_counts.entry(t.clone()).or_insert(0) += 1;
        }
        match self.unique_texts.get_mut(&post.norm_text) {
            Some(u) => {
                u.count += 1;
                if post.created_at >= u.newest_at {
                    u.newest_at = post.created_at;
                    u.representative = post.id.clone();
                }
            }
            None => {
                self.unique_texts.insert(
                    post.norm_text.clone(),
                    UniqueText {
                        count: 1,
                        representative: post.id.clone(),
                        newest_at: post.created_at,
                    },
                );
            }
        }
    }

    /// Folds a member's annotation into the event-level location, category
    /// and sentiment.
    pub fn apply_annotation(&mut self, annotation: &PostAnnotation, anger_threshold: f64) {
        self.tallies.add(annotation);
        self.refresh_annotations(anger_threshold);
    }

    pub fn refresh_annotations(&mut self, anger_threshold: f64) {
        self.category = self.tallies.category.winner();
        self.sentiment = self.tallies.sentiment.summarize(anger_threshold);
        self.location = self.tallies.location.resolve();
    }

    pub fn post_count(&self) -> usize {
        self.member_ids.len()
    }

    /// Most frequent unique text; ties go to the newest, then text order.
    pub fn headline(&self) -> Option<(&str, &UniqueText)> {
        self.unique_texts
            .iter()
            .max_by(|(at, a), (bt, b)| a.count.cmp(&b.count).then(a.newest_at.cmp(&b.newest_at)).then(bt.cmp(at)))
            .map(|(t, u)| (t.as_str(), u))
    }

    /// Top terms by count, ties in term order.
    pub fn top_terms(&self, k: usize) -> Vec<(String, u64)> {
        top_k(self.term_counts.iter().map(|(t, c)| (t.clone(), *c)), k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    pub theta: f64,
    pub window: Duration,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            window: Duration::seconds((DEFAULT_WINDOW_HOURS * 3600.0) as i64),
        }
    }
}

impl ClusterConfig {
    pub fn new(theta: f64, window_hours: f64) -> Self {
        Self {
            theta,
            window: Duration::milliseconds((window_hours * 3_600_000.0).round() as i64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub event_id: String,
    pub created: bool,
    /// Cosine to the joined event's centroid before the post was added;
    /// `None` for a new event.
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ClusterState {
    config: ClusterConfig,
    stats: CorpusStats,
    events: Vec<Event>,
    by_id: HashMap<String, usize>,
}

impl ClusterState {
    pub fn new(config: ClusterConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    /// Rebuilds from persisted events and statistics.
    pub fn restore(config: ClusterConfig, mut events: Vec<Event>, stats: CorpusStats) -> Self {
        events.sort_by_key(|e| e.ordinal);
        let by_id = events.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        Self {
            config,
            stats,
            events,
            by_id,
        }
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    /// Events in creation order.
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event(&self, id: &str) -> Option<&Event> {
        self.by_id.get(id).map(|&i| &self.events[i])
    }

    pub fn event_mut(&mut self, id: &str) -> Option<&mut Event> {
        self.by_id.get(id).map(|&i| &mut self.events[i])
    }

    fn is_active(&self, e: &Event, at: DateTime<Utc>) -> bool {
        (at - e.last_seen).abs() <= self.config.window
    }

    pub fn assign(&mut self, post: &Post) -> Assignment {
        let vector = tfidf_vector(&post.tokens, &self.stats);
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.events.iter().enumerate() {
            if !self.is_active(e, post.created_at) {
                continue;
            }
            let sim = cosine(&vector, &e.centroid);
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((i, sim));
            }
        }
        self.stats.observe(&post.tokens);

        match best {
            Some((i, sim)) if sim >= self.config.theta => {
                let e = &mut self.events[i];
                e.absorb(post, &vector);
                Assignment {
                    event_id: e.id.clone(),
                    created: false,
                    similarity: Some(sim),
                }
            }
            _ => {
                let mut id = format!("ev-{}", post.id);
                // post ids are unique upstream; keep event ids unique regardless
                let mut n = 1;
                while self.by_id.contains_key(&id) {
                    n += 1;
                    id = format!("ev-{}~{n}", post.id);
                }
                let ordinal = self.events.len() as u64;
                self.by_id.insert(id.clone(), self.events.len());
                self.events.push(Event::found(id.clone(), ordinal, post, vector));
                Assignment {
                    event_id: id,
                    created: true,
                    similarity: None,
                }
            }
        }
    }
}

/// Weights of the related-event score.
const RELATED_GEO_WEIGHT: f64 = 0.4;
const RELATED_TIME_WEIGHT: f64 = 0.3;
const RELATED_CATEGORY_WEIGHT: f64 = 0.3;
const RELATED_GEO_SCALE_KM: f64 = 50.0;
const RELATED_TIME_SCALE_HOURS: f64 = 6.0;
pub const DEFAULT_RELATED_K: usize = 5;

/// Hours between two time spans; 0 when they overlap.
pub fn span_gap_hours(a: (DateTime<Utc>, DateTime<Utc>), b: (DateTime<Utc>, DateTime<Utc>)) -> f64 {
    let gap = if a.1 < b.0 {
        b.0 - a.1
    } else if b.1 < a.0 {
        a.0 - b.1
    } else {
        Duration::zero()
    };
    gap.num_milliseconds() as f64 / 3_600_000.0
}

pub fn related_score(e: &Event, f: &Event) -> f64 {
    let geo = match (&e.location, &f.location) {
        (Some(a), Some(b)) => (-haversine_km(a.coords(), b.coords()) / RELATED_GEO_SCALE_KM).exp(),
        _ => 0.0,
    };
    let gap = span_gap_hours((e.first_seen, e.last_seen), (f.first_seen, f.last_seen));
    let time = (-gap / RELATED_TIME_SCALE_HOURS).exp();
    let cat = if e.category == f.category { 1.0 } else { 0.0 };
    RELATED_GEO_WEIGHT * geo + RELATED_TIME_WEIGHT * time + RELATED_CATEGORY_WEIGHT * cat
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelatedEvent<'a> {
    pub event: &'a Event,
    pub score: f64,
}

/// Ranks other events by location, time and category affinity; ties go to
/// the newer `last_seen`, then id order.
pub fn related_events<'a>(e: &Event, all: impl IntoIterator<Item = &'a Event>, k: usize) -> Vec<RelatedEvent<'a>> {
    let mut scored: Vec<RelatedEvent<'a>> = all
        .into_iter()
        .filter(|f| f.id != e.id)
        .map(|f| RelatedEvent {
            score: related_score(e, f),
            event: f,
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.event.last_seen.cmp(&a.event.last_seen))
            .then(a.event.id.cmp(&b.event.id))
    });
    scored.truncate(k);
    scored
}

pub const DEFAULT_TRENDING_K: usize = 50;

fn top_k(counts: impl IntoIterator<Item = (String, u64)>, k: usize) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

/// Summed term counts over the selected events, top `k` by count with ties
/// in lexicographic order.
pub fn trending_terms<'a>(selection: impl IntoIterator<Item = &'a Event>, k: usize) -> Vec<(String, u64)> {
    let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
    for e in selection {
        for (t, c) in &e.term_counts {
            *totals.entry(t.as_str()).or_insert(0) += c;
        }
    }
    top_k(totals.into_iter().map(|(t, c)| (t.to_string(), c)), k)
}
