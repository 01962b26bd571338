//! The single-writer pipeline: parse, filter, annotate, cluster, persist,
//! and publish immutable snapshots for readers.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;

use crate::cluster::{Assignment, ClusterState, CorpusStats, Event};
use crate::config::{PipelineParams, Resources};
use crate::error::Result;
use crate::ingest::{RawPost, StreamItem, TrackConfig};
use crate::media::{embedded_media, MediaIndex, RankedMedia};
use crate::parse::{NoiseFilter, NoiseReason, Post};
use crate::store::{RecordBody, Store, StoreState, StoredPost};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    /// Records received from the stream, whatever their fate.
    pub posts_ingested: u64,
    pub posts_kept: u64,
    pub dropped: BTreeMap<NoiseReason, u64>,
    pub duplicate_ids: u64,
    pub skipped_records: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Assigned(Assignment),
    Dropped(NoiseReason),
    DuplicateId,
}

/// Immutable view published by the pipeline. Readers hold an `Arc` and
/// never observe a partial update.
#[derive(Debug)]
pub struct Snapshot {
    pub seq: u64,
    pub events: BTreeMap<String, Arc<Event>>,
    pub posts: Vec<Arc<StoredPost>>,
    post_index: HashMap<String, usize>,
    pub counters: Counters,
    pub media: Arc<MediaIndex>,
    pub resources: Arc<Resources>,
    media_cache: Mutex<HashMap<(String, u64), Arc<Vec<RankedMedia>>>>,
}

impl Snapshot {
    pub fn empty(resources: Arc<Resources>, media: Arc<MediaIndex>) -> Self {
        Snapshot {
            seq: 0,
            events: BTreeMap::new(),
            posts: Vec::new(),
            post_index: HashMap::new(),
            counters: Counters::default(),
            media,
            resources,
            media_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn event(&self, id: &str) -> Option<&Arc<Event>> {
        self.events.get(id)
    }

    pub fn post(&self, id: &str) -> Option<&Arc<StoredPost>> {
        self.post_index.get(id).map(|&i| &self.posts[i])
    }

    pub fn members<'a>(&'a self, e: &'a Event) -> impl Iterator<Item = &'a StoredPost> + 'a {
        e.member_ids.iter().filter_map(|id| self.post(id).map(|p| p.as_ref()))
    }

    /// Media for an event, computed on first request and cached for this
    /// snapshot and media index version.
    pub fn cached_media(&self, id: &str, compute: impl FnOnce() -> Vec<RankedMedia>) -> Arc<Vec<RankedMedia>> {
        let key = (id.to_string(), self.media.version());
        if let Some(hit) = self.media_cache.lock().expect("media cache").get(&key) {
            return hit.clone();
        }
        let value = Arc::new(compute());
        self.media_cache
            .lock()
            .expect("media cache")
            .insert(key, value.clone());
        value
    }
}

/// Atomic publication point shared between the pipeline and readers.
#[derive(Debug, Clone)]
pub struct SharedSnapshot(Arc<RwLock<Arc<Snapshot>>>);

impl SharedSnapshot {
    pub fn new(initial: Arc<Snapshot>) -> Self {
        Self(Arc::new(RwLock::new(initial)))
    }

    pub fn load(&self) -> Arc<Snapshot> {
        self.0.read().expect("snapshot lock").clone()
    }

    pub fn publish(&self, snap: Arc<Snapshot>) {
        *self.0.write().expect("snapshot lock") = snap;
    }
}

pub struct Pipeline {
    params: PipelineParams,
    resources: Arc<Resources>,
    track: TrackConfig,
    noise: NoiseFilter,
    clusters: ClusterState,
    posts: Vec<Arc<StoredPost>>,
    post_index: HashMap<String, usize>,
    persisted_posts: usize,
    dirty: BTreeSet<String>,
    published: BTreeMap<String, Arc<Event>>,
    counters: Counters,
    since_publish: usize,
    snapshot_seq: u64,
    media: Arc<MediaIndex>,
    store: Option<Store>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("posts", &self.posts.len())
            .field("events", &self.clusters.events().len())
            .field("snapshot_seq", &self.snapshot_seq)
            .finish()
    }
}

impl Pipeline {
    pub fn new(params: PipelineParams, resources: Arc<Resources>, track: TrackConfig) -> Self {
        Self {
            noise: NoiseFilter::new(resources.noise_rules.clone()),
            clusters: ClusterState::new(params.cluster_config()),
            params,
            resources,
            track,
            posts: Vec::new(),
            post_index: HashMap::new(),
            persisted_posts: 0,
            dirty: BTreeSet::new(),
            published: BTreeMap::new(),
            counters: Counters::default(),
            since_publish: 0,
            snapshot_seq: 0,
            media: Arc::new(MediaIndex::new()),
            store: None,
        }
    }

    /// Default resources and parameters.
    pub fn with_defaults(track: TrackConfig) -> Self {
        Self::new(PipelineParams::default(), Arc::new(Resources::default()), track)
    }

    pub fn set_media_index(&mut self, media: MediaIndex) {
        self.media = Arc::new(media);
    }

    /// Attaches a store, resuming from its loaded state. Clustering
    /// statistics are recomputed from the stored posts; the flood filter
    /// starts empty.
    pub fn attach_store(&mut self, store: Store, state: StoreState) {
        let mut stats = CorpusStats::default();
        self.posts.clear();
        self.post_index.clear();
        for p in state.posts {
            stats.observe(&p.post.tokens);
            self.post_index.insert(p.post.id.clone(), self.posts.len());
            self.posts.push(Arc::new(p));
        }
        self.persisted_posts = self.posts.len();
        let events: Vec<Event> = state.events.into_values().collect();
        self.published = events.iter().map(|e| (e.id.clone(), Arc::new(e.clone()))).collect();
        self.clusters = ClusterState::restore(self.params.cluster_config(), events, stats);
        self.counters.posts_kept = self.posts.len() as u64;
        self.dirty.clear();
        self.store = Some(store);
    }

    pub fn params(&self) -> &PipelineParams {
        &self.params
    }

    pub fn track(&self) -> &TrackConfig {
        &self.track
    }

    pub fn resources(&self) -> &Arc<Resources> {
        &self.resources
    }

    pub fn clusters(&self) -> &ClusterState {
        &self.clusters
    }

    pub fn posts(&self) -> &[Arc<StoredPost>] {
        &self.posts
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn snapshot_seq(&self) -> u64 {
        self.snapshot_seq
    }

    /// Feeds one stream item; publishes a snapshot every `snapshot_batch`
    /// kept posts.
    pub fn handle(&mut self, item: StreamItem) -> Result<Option<Outcome>> {
        match item {
            StreamItem::Post(raw) => self.process(&raw).map(Some),
            StreamItem::Skipped(_) => {
                self.counters.skipped_records += 1;
                Ok(None)
            }
        }
    }

    pub fn process(&mut self, raw: &RawPost) -> Result<Outcome> {
        self.counters.posts_ingested += 1;
        if self.post_index.contains_key(&raw.id) {
            self.counters.duplicate_ids += 1;
            return Ok(Outcome::DuplicateId);
        }
        let post = Post::parse(raw, &self.resources.tokenizer, &self.track);
        let verdict = self.noise.classify(&post);
        if !verdict.keep {
            *self.counters.dropped.entry(verdict.reason).or_insert(0) += 1;
            return Ok(Outcome::Dropped(verdict.reason));
        }
        self.counters.posts_kept += 1;

        let annotation = self.resources.annotator.annotate_post(&post);
        let assignment = self.clusters.assign(&post);
        let event = self
            .clusters
            .event_mut(&assignment.event_id)
            .expect("assigned event exists");
        event.apply_annotation(&annotation, self.resources.annotator.anger_threshold);
        for m in embedded_media(&post) {
            if !event.media.contains(&m.id) {
                event.media.push(m.id);
            }
        }
        self.dirty.insert(assignment.event_id.clone());
        self.post_index.insert(post.id.clone(), self.posts.len());
        self.posts.push(Arc::new(StoredPost {
            post,
            annotation,
            event_id: assignment.event_id.clone(),
        }));

        self.since_publish += 1;
        if self.since_publish >= self.params.snapshot_batch {
            self.publish()?;
        }
        Ok(Outcome::Assigned(assignment))
    }

    /// Persists pending posts and changed events, then builds a snapshot.
    pub fn publish(&mut self) -> Result<Arc<Snapshot>> {
        let dirty = std::mem::take(&mut self.dirty);
        let mut changed = Vec::with_capacity(dirty.len());
        for id in &dirty {
            let e = Arc::new(self.clusters.event(id).expect("dirty event exists").clone());
            changed.push(e.clone());
            self.published.insert(id.clone(), e);
        }
        if let Some(store) = self.store.as_mut() {
            let mut batch: Vec<RecordBody> = self.posts[self.persisted_posts..]
                .iter()
                .map(|p| RecordBody::Post(Box::new(p.as_ref().clone())))
                .collect();
            batch.extend(changed.iter().map(|e| RecordBody::EventUpsert(Box::new(e.as_ref().clone()))));
            if !batch.is_empty() {
                store.append_batch(batch)?;
            }
        }
        self.persisted_posts = self.posts.len();
        self.since_publish = 0;
        self.snapshot_seq += 1;
        Ok(Arc::new(self.snapshot()))
    }

    /// The state as of the last publication, with the current counters.
    fn snapshot(&self) -> Snapshot {
        let posts: Vec<Arc<StoredPost>> = self.posts[..self.persisted_posts].to_vec();
        let post_index = posts.iter().enumerate().map(|(i, p)| (p.post.id.clone(), i)).collect();
        Snapshot {
            seq: self.snapshot_seq,
            events: self.published.clone(),
            posts,
            post_index,
            counters: self.counters.clone(),
            media: self.media.clone(),
            resources: self.resources.clone(),
            media_cache: Mutex::new(HashMap::new()),
        }
    }

    /// Drains an item source to completion and publishes the final snapshot.
    pub fn run(&mut self, items: impl IntoIterator<Item = StreamItem>, shared: Option<&SharedSnapshot>) -> Result<Arc<Snapshot>> {
        let mut last_seq = self.snapshot_seq;
        for item in items {
            self.handle(item)?;
            if let Some(shared) = shared {
                if self.snapshot_seq != last_seq {
                    shared.publish(Arc::new(self.snapshot()));
                    last_seq = self.snapshot_seq;
                }
            }
        }
        let snap = self.publish()?;
        if let Some(shared) = shared {
            shared.publish(snap.clone());
        }
        Ok(snap)
    }

    /// Store-comparable view of in-memory state as of the last publication.
    pub fn durable_view(&self) -> (Vec<StoredPost>, BTreeMap<String, Event>) {
        let posts = self.posts[..self.persisted_posts].iter().map(|p| p.as_ref().clone()).collect();
        let events = self.published.iter().map(|(k, v)| (k.clone(), v.as_ref().clone())).collect();
        (posts, events)
    }

    /// Ids of events changed since the last publication.
    pub fn pending_events(&self) -> &BTreeSet<String> {
        &self.dirty
    }

    /// Distinct post ids seen, kept posts only.
    pub fn known_post_ids(&self) -> HashSet<&str> {
        self.post_index.keys().map(String::as_str).collect()
    }
}
