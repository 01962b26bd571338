use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use act_core::annotate::Category;
use act_core::cluster::Event;
use act_core::parse::Post;
use act_core::store::FilterQuery;
use chrono::{DateTime, Duration, Utc};

type Vector = BTreeMap<String, f64>;

fn idf_from_prefix(term: &str, earlier: &[&Post]) -> f64 {
    let n = earlier.len() as f64;
    let df = earlier.iter().filter(|p| p.tokens.iter().any(|t| t == term)).count() as f64;
    ((1.0 + n) / (1.0 + df)).ln() + 1.0
}

fn norm(v: &Vector) -> f64 {
    let mut s = 0.0;
    for w in v.values() {
        s += w * w;
    }
    s.sqrt()
}

fn normalize(v: &Vector) -> Vector {
    let n = norm(v);
    if n == 0.0 {
        return Vector::new();
    }
    v.iter().map(|(t, w)| (t.clone(), w / n)).collect()
}

fn post_vector(post: &Post, earlier: &[&Post]) -> Vector {
    let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
    for t in &post.tokens {
        *tf.entry(t).or_default() += 1;
    }
    let raw: Vector = tf
        .into_iter()
        .map(|(t, n)| (t.to_string(), n as f64 * idf_from_prefix(t, earlier)))
        .collect();
    normalize(&raw)
}

fn cosine(a: &Vector, b: &Vector) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let mut dot = 0.0;
    for (t, w) in a {
        if let Some(x) = b.get(t) {
            dot += w * x;
        }
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Brute-force clustering of kept posts in arrival order. Every step
/// rebuilds each event's centroid from its members' vectors and its
/// `last_seen` from their timestamps. Member vectors use IDF over the posts
/// that preceded them. Returns the event id of every post.
///
/// The centroid is the normalized member sum, which has the same direction
/// as the normalized mean; summing keeps the arithmetic in the same order
/// as any member-order accumulation, so near-ties resolve identically.
pub fn brute_force_clusters(posts: &[Post], theta: f64, window_hours: f64) -> Vec<String> {
    let window = Duration::milliseconds((window_hours * 3_600_000.0).round() as i64);
    let refs: Vec<&Post> = posts.iter().collect();
    let mut vectors: Vec<Vector> = Vec::with_capacity(posts.len());
    let mut events: Vec<(String, Vec<usize>)> = Vec::new();
    let mut out = Vec::with_capacity(posts.len());
    for (i, post) in posts.iter().enumerate() {
        let v = post_vector(post, &refs[..i]);
        let mut best: Option<(usize, f64)> = None;
        for (ei, (_, members)) in events.iter().enumerate() {
            let last_seen = members.iter().map(|&m| posts[m].created_at).max().unwrap();
            if (post.created_at - last_seen).abs() > window {
                continue;
            }
            let mut sum = Vector::new();
            for &m in members {
                for (t, w) in &vectors[m] {
                    *sum.entry(t.clone()).or_insert(0.0) += w;
                }
            }
            let sim = cosine(&v, &normalize(&sum));
            // strictly greater keeps the older event on ties
            if best.is_none() || sim > best.unwrap().1 {
                best = Some((ei, sim));
            }
        }
        vectors.push(v);
        match best {
            Some((ei, sim)) if sim >= theta => {
                events[ei].1.push(i);
                out.push(events[ei].0.clone());
            }
            _ => {
                let id = format!("ev-{}", post.id);
                events.push((id.clone(), vec![i]));
                out.push(id);
            }
        }
    }
    out
}

/// L2-normalized mean of the members' vectors, recomputed from scratch.
pub fn centroid_by_mean(members: &[&Post], all_in_order: &[Post]) -> BTreeMap<String, f64> {
    let refs: Vec<&Post> = all_in_order.iter().collect();
    let mut mean = Vector::new();
    for m in members {
        let pos = all_in_order.iter().position(|p| p.id == m.id).expect("member in corpus");
        for (t, w) in post_vector(m, &refs[..pos]) {
            *mean.entry(t).or_insert(0.0) += w / members.len() as f64;
        }
    }
    normalize(&mean)
}

/// Full-scan filter over every event, written out predicate by predicate.
pub fn naive_query(q: &FilterQuery, events: &[&Event]) -> Vec<String> {
    let mut hits: Vec<&Event> = Vec::new();
    for e in events {
        let geotag_ok = match q.geotagged {
            None => true,
            Some(want) => want == e.location.is_some(),
        };
        let bbox_ok = match (&q.bbox, q.geotagged) {
            (None, _) => true,
            (Some(_), Some(false)) => true,
            (Some(b), _) => match &e.location {
                None => false,
                Some(l) => b.min_lon <= l.lon && l.lon <= b.max_lon && b.min_lat <= l.lat && l.lat <= b.max_lat,
            },
        };
        let cat_ok = q.categories.as_ref().is_none_or(|c| c.contains(&e.category));
        let kw_ok = q.keyword.as_ref().is_none_or(|k| e.term_counts.get(k).copied().unwrap_or(0) > 0);
        let since_ok = q.since.is_none_or(|s| e.last_seen >= s);
        let until_ok = q.until.is_none_or(|u| e.first_seen <= u);
        if geotag_ok && bbox_ok && cat_ok && kw_ok && since_ok && until_ok {
            hits.push(e);
        }
    }
    hits.sort_by(|a, b| match b.last_seen.cmp(&a.last_seen) {
        std::cmp::Ordering::Equal => a.id.cmp(&b.id),
        o => o,
    });
    hits.into_iter().take(q.limit).map(|e| e.id.clone()).collect()
}

/// Token counts summed over the member posts of the given events; top `k`
/// by count with ties in lexicographic order.
pub fn recount_terms(events: &[&Event], posts_by_id: &HashMap<&str, &Post>, k: usize) -> Vec<(String, u64)> {
    let mut totals: HashMap<String, u64> = HashMap::new();
    for e in events {
        for id in &e.member_ids {
            for t in &posts_by_id[id.as_str()].tokens {
                *totals.entry(t.clone()).or_default() += 1;
            }
        }
    }
    let mut v: Vec<(String, u64)> = totals.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Great-circle distance written out from the haversine identity.
pub fn km_between(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = (lat2 - lat1).to_radians();
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

fn hours_between_spans(a0: DateTime<Utc>, a1: DateTime<Utc>, b0: DateTime<Utc>, b1: DateTime<Utc>) -> f64 {
    let ms = if a1 < b0 {
        (b0 - a1).num_milliseconds()
    } else if b1 < a0 {
        (a0 - b1).num_milliseconds()
    } else {
        0
    };
    ms as f64 / 3_600_000.0
}

/// Inputs to the media score, evaluated by hand.
#[derive(Debug, Clone)]
pub struct MediaCase {
    pub caption: Vec<String>,
    pub terms: Vec<String>,
    pub item_at: Option<(f64, f64)>,
    pub center: Option<(f64, f64)>,
    pub item_time: DateTime<Utc>,
    pub span: (DateTime<Utc>, DateTime<Utc>),
}

pub fn hand_media_score(c: &MediaCase) -> f64 {
    let a: HashSet<&String> = c.caption.iter().collect();
    let b: HashSet<&String> = c.terms.iter().collect();
    let inter = a.intersection(&b).count() as f64;
    let union = a.union(&b).count() as f64;
    let jac = if union == 0.0 { 0.0 } else { inter / union };
    let geo = match (c.item_at, c.center) {
        (Some((x1, y1)), Some((x2, y2))) => (-km_between(x1, y1, x2, y2) / 25.0).exp(),
        _ => 0.0,
    };
    let gap = hours_between_spans(c.item_time, c.item_time, c.span.0, c.span.1);
    0.5 * jac + 0.3 * geo + 0.2 * (-gap / 12.0).exp()
}

/// Related-event score written out from its definition.
pub fn hand_related_score(e: &Event, f: &Event) -> f64 {
    let geo = match (&e.location, &f.location) {
        (Some(a), Some(b)) => (-km_between(a.lon, a.lat, b.lon, b.lat) / 50.0).exp(),
        _ => 0.0,
    };
    let gap = hours_between_spans(e.first_seen, e.last_seen, f.first_seen, f.last_seen);
    let cat = if e.category == f.category { 0.3 } else { 0.0 };
    0.4 * geo + 0.3 * (-gap / 6.0).exp() + cat
}

/// Whether an event should be flagged angry: the share of members
/// containing any anger term reaches `threshold`.
pub fn angry_recount(members: &[&Post], anger_terms: &BTreeSet<String>, threshold: f64) -> bool {
    if members.is_empty() {
        return false;
    }
    let angry = members
        .iter()
        .filter(|p| p.tokens.iter().any(|t| anger_terms.contains(t)))
        .count();
    angry as f64 / members.len() as f64 >= threshold
}

/// Plurality category among members, ignoring `other`; ties go to the
/// higher-priority category.
pub fn category_recount(cats: &[Category]) -> Category {
    let mut counts: BTreeMap<Category, usize> = BTreeMap::new();
    for c in cats {
        if *c != Category::Other {
            *counts.entry(*c).or_default() += 1;
        }
    }
    let mut best: Option<(Category, usize)> = None;
    // ALL lists categories in priority order
    for c in Category::ALL {
        if let Some(&n) = counts.get(&c) {
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((c, n));
            }
        }
    }
    best.map(|(c, _)| c).unwrap_or(Category::Other)
}
