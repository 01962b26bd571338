//! Read-only views over a published snapshot. The HTTP layer serializes
//! these directly, so the in-process call and the endpoint agree.

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::annotate::{Category, EventLocation, EventSentiment};
use crate::cluster::{related_events, trending_terms, Event};
use crate::error::Result;
use crate::media::{find_media, RankedMedia};
use crate::pipeline::Snapshot;
use crate::store::{query_events, FilterQuery};

pub const DEFAULT_AGENCY_LIMIT: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventSummary {
    pub id: String,
    pub headline: String,
    pub category: Category,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<EventLocation>,
    pub first_seen: DateTime<Utc>,
    pub last_seen: DateTime<Utc>,
    pub post_count: usize,
    pub flagged_angry: bool,
}

impl EventSummary {
    pub fn of(e: &Event) -> Self {
        EventSummary {
            id: e.id.clone(),
            headline: e.headline().map(|(t, _)| t.to_string()).unwrap_or_default(),
            category: e.category,
            location: e.location.clone(),
            first_seen: e.first_seen,
            last_seen: e.last_seen,
            post_count: e.post_count(),
            flagged_angry: e.sentiment.flagged_angry,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContentEntry {
    pub post_id: String,
    pub author: String,
    pub text: String,
    pub norm_text: String,
    pub created_at: DateTime<Utc>,
    /// Members sharing this normalized text.
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventDetail {
    #[serde(flatten)]
    pub summary: EventSummary,
    pub sentiment: EventSentiment,
    pub content: Vec<ContentEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelatedSummary {
    #[serde(flatten)]
    pub event: EventSummary,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermCount {
    pub term: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgencyPost {
    pub id: String,
    pub author: String,
    pub text: String,
    pub created_at: DateTime<Utc>,
    pub event_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub snapshot_seq: u64,
    pub posts_ingested: u64,
    pub events_count: usize,
}

pub fn event_summaries(snap: &Snapshot, q: &FilterQuery) -> Result<Vec<EventSummary>> {
    Ok(query_events(q, snap.events.values().map(|e| e.as_ref()))?
        .into_iter()
        .map(EventSummary::of)
        .collect())
}

/// One entry per unique normalized text, newest representative first.
pub fn event_detail(snap: &Snapshot, id: &str) -> Option<EventDetail> {
    let e = snap.event(id)?;
    let mut content: Vec<ContentEntry> = e
        .unique_texts
        .iter()
        .filter_map(|(norm, u)| {
            let p = &snap.post(&u.representative)?.post;
            Some(ContentEntry {
                post_id: p.id.clone(),
                author: p.author.clone(),
                text: p.text.clone(),
                norm_text: norm.clone(),
                created_at: p.created_at,
                count: u.count,
            })
        })
        .collect();
    content.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.post_id.cmp(&b.post_id)));
    Some(EventDetail {
        summary: EventSummary::of(e),
        sentiment: e.sentiment,
        content,
    })
}

pub fn related(snap: &Snapshot, id: &str, k: usize) -> Option<Vec<RelatedSummary>> {
    let e = snap.event(id)?;
    Some(
        related_events(e, snap.events.values().map(|f| f.as_ref()), k)
            .into_iter()
            .map(|r| RelatedSummary {
                event: EventSummary::of(r.event),
                score: r.score,
            })
            .collect(),
    )
}

pub fn media(snap: &Snapshot, id: &str, k: usize) -> Option<Vec<RankedMedia>> {
    let e = snap.event(id)?;
    let compute = || {
        let members = snap.members(e).map(|p| &p.post);
        let res = &snap.resources;
        find_media(e, members, &snap.media, &res.annotator.categories, &res.media_weights, k)
    };
    // the cache holds the default page size only
    if k == crate::media::DEFAULT_MEDIA_K {
        Some(snap.cached_media(id, compute).as_ref().clone())
    } else {
        Some(compute())
    }
}

/// Trending terms over the events selected by `q`, limit included.
pub fn terms(snap: &Snapshot, q: &FilterQuery, k: usize) -> Result<Vec<TermCount>> {
    let selection = query_events(q, snap.events.values().map(|e| e.as_ref()))?;
    Ok(trending_terms(selection, k)
        .into_iter()
        .map(|(term, count)| TermCount { term, count })
        .collect())
}

pub fn agencies(snap: &Snapshot, limit: usize) -> Vec<AgencyPost> {
    let mut out: Vec<AgencyPost> = snap
        .posts
        .iter()
        .filter(|p| p.post.is_agency)
        .map(|p| AgencyPost {
            id: p.post.id.clone(),
            author: p.post.author.clone(),
            text: p.post.text.clone(),
            created_at: p.post.created_at,
            event_id: p.event_id.clone(),
        })
        .collect();
    out.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.id.cmp(&b.id)));
    out.truncate(limit);
    out
}

pub fn health(snap: &Snapshot) -> Health {
    Health {
        status: "ok",
        snapshot_seq: snap.seq,
        posts_ingested: snap.counters.posts_ingested,
        events_count: snap.events.len(),
    }
}

/// Every event summary in id order, as written by the batch replay.
pub fn export_summaries(snap: &Snapshot) -> Vec<EventSummary> {
    snap.events.values().map(|e| EventSummary::of(e)).collect()
}
