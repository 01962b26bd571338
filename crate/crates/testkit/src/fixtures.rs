use std::collections::BTreeSet;
use std::sync::Arc;

use act_core::annotate::Category;
use act_core::geo::Coords;
use act_core::ingest::{RawPost, SourceTag, TrackConfig, DEFAULT_KEYWORDS};
use act_core::pipeline::{Pipeline, Snapshot};
use act_core::store::{BBox, FilterQuery, MAX_LIMIT};
use act_core::synth::{SyntheticGenerator, SYNTHETIC_AGENCIES};
use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 2013-10-17T00:00:00Z
pub fn epoch() -> DateTime<Utc> {
    DateTime::from_timestamp(1_381_968_000, 0).unwrap()
}

pub fn at_minutes(m: i64) -> DateTime<Utc> {
    epoch() + Duration::minutes(m)
}

pub fn raw(id: &str, at: DateTime<Utc>, author: &str, text: &str, coords: Option<(f64, f64)>) -> RawPost {
    RawPost {
        id: id.to_string(),
        created_at: at,
        author: author.to_string(),
        text: text.to_string(),
        coords: coords.map(|(lon, lat)| Coords::new(lon, lat)),
        source_tag: SourceTag::Replay,
    }
}

/// Default keywords plus the synthetic generator's agency accounts.
pub fn agency_track() -> TrackConfig {
    TrackConfig::new(SYNTHETIC_AGENCIES.iter().copied(), DEFAULT_KEYWORDS.iter().copied(), 0.0).unwrap()
}

/// Runs raw posts through a default pipeline without pacing or storage.
pub fn run_pipeline(raws: &[RawPost]) -> (Pipeline, Arc<Snapshot>) {
    let mut p = Pipeline::with_defaults(agency_track());
    for r in raws {
        p.process(r).unwrap();
    }
    let snap = p.publish().unwrap();
    (p, snap)
}

pub fn synthetic(seed: u64, count: usize) -> Vec<RawPost> {
    SyntheticGenerator::new(seed, count).collect()
}

#[derive(Debug, Clone)]
pub struct ClusterFixture {
    pub name: &'static str,
    pub posts: Vec<RawPost>,
}

/// Corpora of at most 500 posts for the clustering oracle, including
/// adversarial near-duplicate, window-edge and tie-breaking cases.
pub fn cluster_fixtures() -> Vec<ClusterFixture> {
    let mut out = vec![
        ClusterFixture { name: "synthetic-120", posts: synthetic(101, 120) },
        ClusterFixture { name: "synthetic-200", posts: synthetic(102, 200) },
        ClusterFixture { name: "synthetic-300", posts: synthetic(103, 300) },
        ClusterFixture { name: "synthetic-400", posts: synthetic(104, 400) },
        ClusterFixture { name: "synthetic-500", posts: synthetic(105, 500) },
    ];
    out.push(ClusterFixture { name: "near-duplicates", posts: near_duplicates(7, 400) });
    out.push(ClusterFixture { name: "window-edges", posts: window_edges() });
    out.push(ClusterFixture { name: "twin-event-tie", posts: twin_event_tie() });
    out.push(ClusterFixture { name: "half-overlap", posts: half_overlap(11, 300) });
    out.push(ClusterFixture { name: "shuffled-times", posts: shuffled_times(13, 350) });
    out.push(ClusterFixture { name: "single-term", posts: single_term() });
    out
}

const NEAR_DUP_BASES: &[&str] = &[
    "bushfire threatens homes near springwood road closed",
    "flood waters rising fast in lismore evacuate now",
    "storm damage in hornsby trees down across power lines",
    "earthquake shakes christchurch buildings evacuated",
    "fire crews battling blaze at winmalee school",
];

const NEAR_DUP_EXTRAS: &[&str] = &["urgent", "update", "again", "terrible", "smoke", "warning", "residents", "tonight", "help"];

/// Base texts mutated by dropping, swapping or appending a single word.
pub fn near_duplicates(seed: u64, n: usize) -> Vec<RawPost> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = epoch();
    (0..n)
        .map(|i| {
            let base = NEAR_DUP_BASES.choose(&mut rng).unwrap();
            let mut words: Vec<&str> = base.split(' ').collect();
            match rng.gen_range(0..4) {
                0 => {
                    let k = rng.gen_range(0..words.len());
                    words.remove(k);
                }
                1 => {
                    let k = rng.gen_range(0..words.len());
                    words[k] = NEAR_DUP_EXTRAS.choose(&mut rng).unwrap();
                }
                2 => words.push(NEAR_DUP_EXTRAS.choose(&mut rng).unwrap()),
                _ => {}
            }
            t += Duration::seconds(rng.gen_range(1..400));
            raw(&format!("nd-{i:04}"), t, &format!("u{}", rng.gen_range(0..60)), &words.join(" "), None)
        })
        .collect()
}

/// The same text at gaps just under, at, and just over the six-hour window.
pub fn window_edges() -> Vec<RawPost> {
    let text = "bushfire near katoomba please evacuate";
    let gaps = [
        Duration::hours(6),
        Duration::hours(6) + Duration::seconds(1),
        Duration::hours(6) - Duration::seconds(1),
        Duration::hours(6),
        Duration::hours(7),
        Duration::minutes(1),
        Duration::hours(6) + Duration::milliseconds(1),
    ];
    let mut t = epoch();
    let mut out = vec![raw("we-0", t, "a0", text, None)];
    for (i, g) in gaps.iter().enumerate() {
        t += *g;
        out.push(raw(&format!("we-{}", i + 1), t, &format!("a{}", i + 1), text, None));
    }
    out
}

/// Two events with identical centroids, both active for a late-arriving
/// post stamped between them; the older must win.
pub fn twin_event_tie() -> Vec<RawPost> {
    let text = "fire kinglake road closed";
    vec![
        raw("tw-a", at_minutes(0), "a", text, None),
        raw("tw-b", at_minutes(7 * 60), "b", text, None),
        raw("tw-c", at_minutes(210), "c", text, None),
        raw("tw-d", at_minutes(215), "d", &format!("{text} again"), None),
        raw("tw-e", at_minutes(7 * 60 + 5), "e", text, None),
    ]
}

const VOCAB: &[&str] = &[
    "fire", "flood", "storm", "smoke", "road", "closed", "evacuate", "homes", "crews", "river", "rain", "wind", "hail", "power", "trees",
    "school", "bridge", "sydney", "penrith", "lithgow",
];

/// Four-word posts drawn from a small vocabulary so many pairs share about
/// half their terms, keeping cosines near the threshold.
pub fn half_overlap(seed: u64, n: usize) -> Vec<RawPost> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = epoch();
    (0..n)
        .map(|i| {
            let words: Vec<&str> = VOCAB.choose_multiple(&mut rng, 4).copied().collect();
            t += Duration::seconds(rng.gen_range(30..900));
            raw(&format!("ho-{i:04}"), t, &format!("u{i}"), &words.join(" "), None)
        })
        .collect()
}

/// Synthetic posts with timestamps shuffled across a 30-hour span, so
/// later arrivals can be older than active events.
pub fn shuffled_times(seed: u64, n: usize) -> Vec<RawPost> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut posts = synthetic(seed, n);
    for p in &mut posts {
        p.created_at = epoch() + Duration::seconds(rng.gen_range(0..30 * 3600));
    }
    posts
}

/// Repeated one-term posts by distinct authors; IDF collapses as N grows.
pub fn single_term() -> Vec<RawPost> {
    (0..150)
        .map(|i| {
            let text = if i % 3 == 0 { "fire" } else if i % 3 == 1 { "fire fire smoke" } else { "smoke" };
            raw(&format!("st-{i:03}"), at_minutes(i * 5), &format!("s{i}"), text, None)
        })
        .collect()
}

pub const EXPLETIVE_TEMPLATES: &[&str] = &[
    "fucking useless response to the bushfire at {place}",
    "where the fuck are the fire trucks in {place}",
    "this flood warning for {place} is bullshit",
    "shit, the fire just jumped the road at {place}",
    "bloody hell the storm wrecked {place}",
    "wtf no evacuation alert for {place} bushfire",
    "damn this smoke over {place} is awful",
];

const CALM_TEMPLATES: &[&str] = &[
    "bushfire update for {place} crews working hard",
    "flood levels steady near {place} this morning",
    "storm passing {place} stay indoors",
    "fire danger rating high around {place}",
];

const ANGER_PLACES: &[&str] = &["katoomba", "penrith", "lithgow", "gosford", "kinglake", "ipswich", "bundaberg", "hobart"];

/// 50 posts carrying an expletive from the anger list mixed into 150
/// ordinary ones. Returns the corpus and the ids of the expletive posts.
pub fn anger_corpus(seed: u64) -> (Vec<RawPost>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds: Vec<bool> = (0..200).map(|i| i < 50).collect();
    kinds.shuffle(&mut rng);
    let mut t = epoch();
    let mut posts = Vec::new();
    let mut angry = Vec::new();
    for (i, is_angry) in kinds.into_iter().enumerate() {
        let place = ANGER_PLACES.choose(&mut rng).unwrap();
        let template = if is_angry {
            EXPLETIVE_TEMPLATES.choose(&mut rng).unwrap()
        } else {
            CALM_TEMPLATES.choose(&mut rng).unwrap()
        };
        let id = format!("ag-{i:03}");
        t += Duration::seconds(rng.gen_range(20..300));
        posts.push(raw(&id, t, &format!("p{i}"), &template.replace("{place}", place), None));
        if is_angry {
            angry.push(id);
        }
    }
    (posts, angry)
}

/// Bounds used to draw random queries.
#[derive(Debug, Clone)]
pub struct QuerySpace {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub keywords: Vec<String>,
}

impl QuerySpace {
    pub fn of(snap: &Snapshot) -> Self {
        let start = snap.events.values().map(|e| e.first_seen).min().unwrap_or_else(epoch);
        let end = snap.events.values().map(|e| e.last_seen).max().unwrap_or_else(epoch);
        let mut keywords: BTreeSet<String> = BTreeSet::new();
        for e in snap.events.values() {
            keywords.extend(e.top_terms(3).into_iter().map(|(t, _)| t));
        }
        keywords.insert("nonexistentterm".into());
        Self {
            start,
            end,
            keywords: keywords.into_iter().collect(),
        }
    }
}

fn random_time(rng: &mut impl Rng, space: &QuerySpace) -> DateTime<Utc> {
    let span = (space.end - space.start).num_seconds().max(1);
    space.start + Duration::seconds(rng.gen_range(-3600..span + 3600))
}

/// A valid query with each filter present about half the time. Bounding
/// boxes range from city-sized to continental.
pub fn random_query(rng: &mut impl Rng, space: &QuerySpace) -> FilterQuery {
    let mut q = FilterQuery::default();
    if rng.gen_bool(0.5) {
        let w = rng.gen_range(0.1..40.0);
        let h = rng.gen_range(0.1..30.0);
        let lon = rng.gen_range(112.0..175.0);
        let lat = rng.gen_range(-45.0..-10.0);
        q.bbox = Some(BBox {
            min_lon: lon - w / 2.0,
            min_lat: (lat - h / 2.0f64).max(-90.0),
            max_lon: (lon + w / 2.0).min(180.0),
            max_lat: (lat + h / 2.0f64).min(90.0),
        });
    }
    if rng.gen_bool(0.4) {
        let n = rng.gen_range(1..=3);
        q.categories = Some(Category::ALL.choose_multiple(rng, n).copied().collect());
    }
    if rng.gen_bool(0.4) {
        q.keyword = space.keywords.choose(rng).cloned();
    }
    let (a, b) = (random_time(rng, space), random_time(rng, space));
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    match rng.gen_range(0..4) {
        0 => q.since = Some(lo),
        1 => q.until = Some(hi),
        2 => {
            q.since = Some(lo);
            q.until = Some(hi);
        }
        _ => {}
    }
    q.geotagged = match rng.gen_range(0..3) {
        0 => None,
        1 => Some(true),
        _ => Some(false),
    };
    q.limit = match rng.gen_range(0..3) {
        0 => rng.gen_range(1..=20),
        1 => rng.gen_range(1..=MAX_LIMIT),
        _ => act_core::store::DEFAULT_LIMIT,
    };
    q
}

/// Renders a query as `/events`-style URL parameters.
pub fn query_params(q: &FilterQuery) -> Vec<(String, String)> {
    let mut out = Vec::new();
    if let Some(b) = &q.bbox {
        out.push(("bbox".into(), format!("{},{},{},{}", b.min_lon, b.min_lat, b.max_lon, b.max_lat)));
    }
    if let Some(cats) = &q.categories {
        let names: Vec<&str> = cats.iter().map(|c| c.as_str()).collect();
        out.push(("category".into(), names.join(",")));
    }
    if let Some(k) = &q.keyword {
        out.push(("q".into(), k.clone()));
    }
    let ts = |t: DateTime<Utc>| t.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true);
    if let Some(s) = q.since {
        out.push(("since".into(), ts(s)));
    }
    if let Some(u) = q.until {
        out.push(("until".into(), ts(u)));
    }
    if let Some(g) = q.geotagged {
        out.push(("geotagged".into(), g.to_string()));
    }
    out.push(("limit".into(), q.limit.to_string()));
    out
}

/// Percent-encodes parameters into a query string.
pub fn encode_query(params: &[(String, String)]) -> String {
    let enc = |s: &str| {
        s.bytes()
            .map(|b| match b {
                b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' | b',' => (b as char).to_string(),
                _ => format!("%{b:02X}"),
            })
            .collect::<String>()
    };
    params
        .iter()
        .map(|(k, v)| format!("{}={}", enc(k), enc(v)))
        .collect::<Vec<_>>()
        .join("&")
}
