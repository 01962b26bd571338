//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use act_core::analytics;
use act_core::annotate::{CategoryRules, SentimentLexicon};
use act_core::cluster::Event;
use act_core::geo::Coords;
use act_core::ingest::{open_corpus, TrackConfig};
use act_core::media::{find_media, MediaIndex, MediaItem, MediaOrigin, MediaWeights};
use act_core::parse::Post;
use act_core::pipeline::{Pipeline, SharedSnapshot, Snapshot};
use act_core::store::{load, query_events, segment_path, RecordBody, Store, StoreRecord, StoredPost};
use act_core::{PipelineParams, Resources};
use act_testkit::*;
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;

/// Tolerance for score comparisons against hand evaluation.
const SCORE_TOL: f64 = 1e-9;
const DETERMINISM_BUDGET: Duration = Duration::from_secs(60);

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn corpus_path() -> PathBuf {
    root().join("data/corpus/synthetic_5000.jsonl")
}

fn config_path() -> PathBuf {
    root().join("config/act.toml")
}

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn replay_corpus() -> Arc<Snapshot> {
    let track = agency_track();
    let mut p = Pipeline::with_defaults(track.clone());
    p.run(open_corpus(corpus_path(), &track).unwrap(), None).unwrap()
}

// ---------------------------------------------------------------------------

fn determinism() -> Outcome {
    let run = || -> Result<(Vec<u8>, Duration), String> {
        let start = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_act"))
            .args(["replay", "--no-serve", "--speed", "0", "--input"])
            .arg(corpus_path())
            .arg("--config")
            .arg(config_path())
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(out.status.success(), "replay failed: {}", String::from_utf8_lossy(&out.stderr));
        Ok((out.stdout, start.elapsed()))
    };
    let (a, ta) = run()?;
    let (b, tb) = run()?;
    ensure!(a == b, "exports differ ({} vs {} bytes)", a.len(), b.len());
    let events: Vec<Value> = serde_json::from_slice(&a).map_err(|e| e.to_string())?;
    ensure!(!events.is_empty(), "empty export");
    let slowest = ta.max(tb);
    ensure!(slowest < DETERMINISM_BUDGET, "replay took {slowest:?}");
    Ok(format!("{} bytes, {} events, identical; slowest run {:.2?}", a.len(), events.len(), slowest))
}

fn clustering_oracle() -> Outcome {
    let fixtures = cluster_fixtures();
    ensure!(fixtures.len() >= 10, "only {} fixtures", fixtures.len());
    let mut total = 0;
    for f in &fixtures {
        ensure!(f.posts.len() <= 500, "{} has {} posts", f.name, f.posts.len());
        let (p, _) = run_pipeline(&f.posts);
        let posts: Vec<Post> = p.posts().iter().map(|s| s.post.clone()).collect();
        let got: Vec<&str> = p.posts().iter().map(|s| s.event_id.as_str()).collect();
        let want = brute_force_clusters(&posts, p.params().theta, p.params().window_hours);
        if let Some(i) = got.iter().zip(&want).position(|(a, b)| a != b) {
            return Err(format!("{}: post {} assigned {} but oracle says {}", f.name, posts[i].id, got[i], want[i]));
        }
        ensure!(got.len() == want.len(), "{}: length mismatch", f.name);
        total += got.len();
    }
    Ok(format!("{} fixtures, {total} assignments, 0 mismatches", fixtures.len()))
}

fn unique_text_rule() -> Outcome {
    let snap = replay_corpus();
    let mut entries = 0;
    for (id, e) in &snap.events {
        let detail = analytics::event_detail(&snap, id).ok_or("missing detail")?;
        let texts: Vec<&str> = detail.content.iter().map(|c| c.norm_text.as_str()).collect();
        let distinct: HashSet<&str> = texts.iter().copied().collect();
        ensure!(distinct.len() == texts.len(), "{id} repeats a text");
        let member_texts: HashSet<&str> = e
            .member_ids
            .iter()
            .map(|m| snap.post(m).map(|p| p.post.norm_text.as_str()).ok_or("member missing"))
            .collect::<Result<_, _>>()?;
        ensure!(member_texts == distinct, "{id} content does not cover its members' texts");
        entries += texts.len();
    }
    Ok(format!("{} events, {entries} content entries, no repeats", snap.events.len()))
}

fn geotag_toggle() -> Outcome {
    let snap = replay_corpus();
    let events: Vec<&Event> = snap.events.values().map(|e| e.as_ref()).collect();
    let space = QuerySpace::of(&snap);
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut ignored = 0;
    for i in 0..1000 {
        let q = random_query(&mut rng, &space);
        let got: Vec<String> = query_events(&q, events.iter().copied())
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|e| e.id.clone())
            .collect();
        let want = naive_query(&q, &events);
        ensure!(got == want, "query {i} mismatched: {q:?}");
        ignored += usize::from(q.bbox_ignored());
    }
    ensure!(ignored > 50, "only {ignored} queries exercised the ignored-bbox rule");
    Ok(format!("1000 queries, 0 mismatches, {ignored} with bbox ignored"))
}

async fn get(router: &axum::Router, uri: &str) -> (StatusCode, axum::http::HeaderMap, Value) {
    let resp = router
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, headers, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn word_cloud(rt: &tokio::runtime::Runtime) -> Outcome {
    let (p, snap) = run_pipeline(&synthetic(2013, 5000));
    let router = act_service::router(SharedSnapshot::new(snap.clone()));
    let posts: HashMap<&str, &Post> = p.posts().iter().map(|s| (s.post.id.as_str(), &s.post)).collect();
    let events: Vec<&Event> = snap.events.values().map(|e| e.as_ref()).collect();
    let space = QuerySpace::of(&snap);
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut nonempty = 0;
    for i in 0..100 {
        let q = random_query(&mut rng, &space);
        let k: usize = if i % 10 == 0 { 1 } else { rng.gen_range(1..=80) };
        let mut params = query_params(&q);
        params.push(("k".into(), k.to_string()));
        let (status, _, body) = rt.block_on(get(&router, &format!("/terms?{}", encode_query(&params))));
        ensure!(status == StatusCode::OK, "selection {i}: status {status}");
        let got: Vec<(String, u64)> = body
            .as_array()
            .ok_or("not an array")?
            .iter()
            .map(|t| (t["term"].as_str().unwrap().to_string(), t["count"].as_u64().unwrap()))
            .collect();
        let selected = naive_query(&q, &events);
        let selected: Vec<&Event> = selected.iter().map(|id| snap.events[id].as_ref()).collect();
        let want = recount_terms(&selected, &posts, k);
        ensure!(got == want, "selection {i} differs: {q:?}");
        nonempty += usize::from(!got.is_empty());
    }
    Ok(format!("100 selections via /terms, 0 mismatches, {nonempty} non-empty"))
}

fn anger_preservation() -> Outcome {
    let (posts, angry_ids) = anger_corpus(50);
    ensure!(angry_ids.len() == 50, "fixture has {} expletive posts", angry_ids.len());
    let (p, _) = run_pipeline(&posts);
    let kept: HashMap<&str, &StoredPost> = p.posts().iter().map(|s| (s.post.id.as_str(), s.as_ref())).collect();
    let retained = angry_ids.iter().filter(|id| kept.contains_key(id.as_str())).count();
    ensure!(retained == 50, "{retained}/50 expletive posts retained");
    let angry = angry_ids.iter().filter(|id| kept[id.as_str()].annotation.sentiment.is_angry).count();
    ensure!(angry == 50, "{angry}/50 expletive posts marked angry");
    let anger: BTreeSet<String> = SentimentLexicon::shipped().anger_terms().map(String::from).collect();
    let mut flagged = 0;
    for e in p.clusters().events() {
        let members: Vec<&Post> = e.member_ids.iter().map(|m| &kept[m.as_str()].post).collect();
        let want = angry_recount(&members, &anger, 0.2);
        ensure!(e.sentiment.flagged_angry == want, "{} flag {} but recount {}", e.id, e.sentiment.flagged_angry, want);
        flagged += usize::from(want);
    }
    Ok(format!("50/50 retained and angry; {flagged} of {} events flagged, matching recount", p.clusters().events().len()))
}

/// Replays decoded records into posts and the latest upsert per event.
fn fold(records: &[StoreRecord]) -> (Vec<StoredPost>, BTreeMap<String, Event>) {
    let mut posts = Vec::new();
    let mut events = BTreeMap::new();
    for r in records {
        match &r.body {
            RecordBody::Post(p) => posts.push(p.as_ref().clone()),
            RecordBody::EventUpsert(e) => {
                events.insert(e.id.clone(), e.as_ref().clone());
            }
        }
    }
    (posts, events)
}

/// Frame boundaries read from lengths alone, plus decoded records.
fn frames(bytes: &[u8]) -> (Vec<usize>, Vec<StoreRecord>) {
    let mut ends = Vec::new();
    let mut records = Vec::new();
    let mut at = 0;
    while at + 8 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        if at + 8 + len > bytes.len() {
            break;
        }
        records.push(serde_json::from_slice(&bytes[at + 8..at + 8 + len]).unwrap());
        at += 8 + len;
        ends.push(at);
    }
    (ends, records)
}

fn stored_run(dir: &Path, raws: &[act_core::RawPost]) -> Result<(), String> {
    let (store, state) = Store::open(dir).map_err(|e| e.to_string())?;
    let params = PipelineParams {
        snapshot_batch: 20,
        ..PipelineParams::default()
    };
    let mut p = Pipeline::new(params, Arc::new(Resources::default()), agency_track());
    p.attach_store(store, state);
    for r in raws {
        p.process(r).map_err(|e| e.to_string())?;
    }
    p.publish().map_err(|e| e.to_string())?;
    Ok(())
}

fn store_crash_safety() -> Outcome {
    // byte-level fixture: cut the log inside a record
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    stored_run(dir.path(), &synthetic(8, 400))?;
    let seg = segment_path(dir.path(), 1);
    let bytes = std::fs::read(&seg).map_err(|e| e.to_string())?;
    let (ends, records) = frames(&bytes);
    ensure!(ends.last() == Some(&bytes.len()), "fixture log has trailing garbage");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cuts = 0;
    for trial in 0..40 {
        // crash while writing record j: everything before it is intact
        let j = if trial < 10 { records.len() - 1 } else { rng.gen_range(0..records.len()) };
        let start = if j == 0 { 0 } else { ends[j - 1] };
        let cut = rng.gen_range(start + 1..ends[j]);
        let copy = tempfile::tempdir().map_err(|e| e.to_string())?;
        std::fs::create_dir_all(copy.path().join("segments")).map_err(|e| e.to_string())?;
        std::fs::write(segment_path(copy.path(), 1), &bytes[..cut]).map_err(|e| e.to_string())?;
        let state = load(copy.path()).map_err(|e| format!("cut at {cut}: {e}"))?;
        let (posts, events) = fold(&records[..j]);
        ensure!(state.posts == posts && state.events == events, "cut at byte {cut} (record {j}): state differs");
        ensure!(state.records as usize == j && state.warnings.len() == 1, "cut at byte {cut}: {} records", state.records);
        let (mut store, _) = Store::open(copy.path()).map_err(|e| e.to_string())?;
        let seq = store
            .append(records[j].body.clone())
            .map_err(|e| e.to_string())?;
        ensure!(seq == j as u64 + 1, "seq resumed at {seq}, expected {}", j + 1);
        ensure!(load(copy.path()).map_err(|e| e.to_string())?.records as usize == j + 1, "append after recovery lost");
        cuts += 1;
    }

    // process-level fixture: kill a paced replay mid-stream
    let full = tempfile::tempdir().map_err(|e| e.to_string())?;
    let killed = tempfile::tempdir().map_err(|e| e.to_string())?;
    let replay = |dir: &Path, speed: &str| {
        Command::new(env!("CARGO_BIN_EXE_act"))
            .args(["replay", "--no-serve", "--speed", speed, "--input"])
            .arg(corpus_path())
            .arg("--data-dir")
            .arg(dir)
            .env("RUST_LOG", "error")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
    };
    let status = replay(full.path(), "0").and_then(|mut c| c.wait()).map_err(|e| e.to_string())?;
    ensure!(status.success(), "full replay failed");
    let mut child = replay(killed.path(), "20000").map_err(|e| e.to_string())?;
    std::thread::sleep(Duration::from_millis(2500));
    ensure!(child.try_wait().map_err(|e| e.to_string())?.is_none(), "paced replay finished before the kill");
    child.kill().map_err(|e| e.to_string())?;
    child.wait().map_err(|e| e.to_string())?;

    let full_bytes = std::fs::read(segment_path(full.path(), 1)).map_err(|e| e.to_string())?;
    let killed_bytes = std::fs::read(segment_path(killed.path(), 1)).map_err(|e| e.to_string())?;
    ensure!(full_bytes.starts_with(&killed_bytes), "killed log is not a prefix of the full log");
    let state = load(killed.path()).map_err(|e| e.to_string())?;
    let (_, full_records) = frames(&full_bytes);
    let (posts, events) = fold(&full_records[..state.records as usize]);
    ensure!(state.records > 0, "nothing persisted before the kill");
    ensure!(state.posts == posts && state.events == events, "killed store state differs from the full run's prefix");
    Ok(format!(
        "{cuts} torn-byte cuts recovered exactly; killed replay kept {}/{} records as an exact prefix",
        state.records,
        full_records.len()
    ))
}

fn media_ranking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let rules = CategoryRules::shipped();
    let weights = MediaWeights::default();
    let places = [("katoomba", 150.312, -33.714), ("penrith", 150.6877, -33.7507), ("hobart", 147.3272, -42.8821), ("cairns", 145.7781, -16.9186)];
    let words = ["fire", "smoke", "flood", "storm", "road", "homes", "crews", "sunset", "coffee", "river"];
    let mut checked = 0;
    let mut excluded = 0;
    let mut scored = 0;
    for pair in 0..20 {
        // event from 1 to 3 posts about one place
        let (place, lon, lat) = places[rng.gen_range(0..places.len())];
        let n = rng.gen_range(1..=3);
        let raws: Vec<_> = (0..n)
            .map(|i| {
                let text = format!("{} {} near {place}", words[rng.gen_range(0..4)], words[rng.gen_range(4..7)]);
                let coords = rng.gen_bool(0.5).then_some((lon, lat));
                raw(&format!("m{pair}-{i}"), at_minutes(i * 30), &format!("w{i}"), &text, coords)
            })
            .collect();
        let (p, _) = run_pipeline(&raws);
        let e = p.clusters().events()[0].clone();
        let members: Vec<&Post> = p.posts().iter().filter(|s| s.event_id == e.id).map(|s| &s.post).collect();

        // the item: sometimes just outside the window, with a perfect caption
        let outside = pair % 5 == 4;
        let item_time = if outside {
            e.last_seen + chrono::Duration::hours(12) + chrono::Duration::seconds(1)
        } else {
            e.first_seen + chrono::Duration::minutes(rng.gen_range(-700..700))
        };
        let caption: Vec<String> = (0..rng.gen_range(1..5)).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect();
        let item_at = rng.gen_bool(0.7).then(|| (lon + rng.gen_range(-0.5..0.5), lat + rng.gen_range(-0.5..0.5)));
        let mut index = MediaIndex::new();
        index.insert(MediaItem {
            id: format!("item-{pair}"),
            url: format!("https://media.example.net/{pair}.jpg"),
            caption_tokens: caption.clone(),
            coords: item_at.map(|(x, y)| Coords::new(x, y)),
            created_at: item_time,
            origin: MediaOrigin::LocalCorpus,
        });
        let found = find_media(&e, members.iter().copied(), &index, rules, &weights, 50);
        let got = found.iter().find(|m| m.item.id == format!("item-{pair}"));

        // terms: top five member terms plus the category keywords
        let posts_by_id: HashMap<&str, &Post> = members.iter().map(|p| (p.id.as_str(), *p)).collect();
        let mut terms: Vec<String> = recount_terms(&[&e], &posts_by_id, 5).into_iter().map(|(t, _)| t).collect();
        terms.extend(rules.keywords(e.category).map(String::from));
        let case = MediaCase {
            caption,
            terms,
            item_at,
            center: e.location.as_ref().map(|l| (l.lon, l.lat)),
            item_time,
            span: (e.first_seen, e.last_seen),
        };
        let want = hand_media_score(&case);
        if outside {
            ensure!(got.is_none(), "pair {pair}: item outside the window was returned");
            excluded += 1;
        } else if want < weights.cutoff {
            ensure!(got.is_none(), "pair {pair}: item below cutoff ({want}) returned");
        } else {
            let score = got.and_then(|m| m.score).ok_or(format!("pair {pair}: expected score {want}, item missing"))?;
            ensure!((score - want).abs() <= SCORE_TOL, "pair {pair}: score {score} vs hand {want}");
            scored += 1;
        }
        checked += 1;
    }
    ensure!(scored >= 8, "only {scored} pairs cleared the cutoff");
    Ok(format!("{checked} pairs: {scored} scored within {SCORE_TOL:e}, {excluded} out-of-window items excluded"))
}

fn api_parity(rt: &tokio::runtime::Runtime) -> Outcome {
    let config = act_core::ApiConfig::load(&config_path()).map_err(|e| e.to_string())?;
    let resources = Arc::new(config.resources().map_err(|e| e.to_string())?);
    let (mut media, _) = act_core::media::index_media(config.paths.media_corpus.as_ref().unwrap()).map_err(|e| e.to_string())?;
    media
        .extend_from_remote(&mut act_core::media::ReplayRemoteMedia::new(config.paths.remote_media.as_ref().unwrap()))
        .map_err(|e| e.to_string())?;
    let mut p = Pipeline::new(config.pipeline.clone(), resources, config.track.clone());
    p.set_media_index(media);
    let track: TrackConfig = config.track.clone();
    let snap = p.run(open_corpus(corpus_path(), &track).map_err(|e| e.to_string())?, None).map_err(|e| e.to_string())?;
    let router = act_service::router(SharedSnapshot::new(snap.clone()));
    let ids: Vec<&String> = snap.events.keys().collect();
    let space = QuerySpace::of(&snap);
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let json = |v: &dyn erased::Ser| v.value();
    let mut by_kind: BTreeMap<&str, usize> = BTreeMap::new();
    for i in 0..50 {
        let id = ids[rng.gen_range(0..ids.len())];
        let (kind, uri, want): (&str, String, Value) = match i % 7 {
            0 => {
                let q = random_query(&mut rng, &space);
                let want = json(&analytics::event_summaries(&snap, &q).unwrap());
                ("events", format!("/events?{}", encode_query(&query_params(&q))), want)
            }
            1 => {
                let q = random_query(&mut rng, &space);
                let k = rng.gen_range(1..=60);
                let mut params = query_params(&q);
                params.push(("k".into(), k.to_string()));
                ("terms", format!("/terms?{}", encode_query(&params)), json(&analytics::terms(&snap, &q, k).unwrap()))
            }
            2 => ("detail", format!("/events/{id}"), json(&analytics::event_detail(&snap, id).unwrap())),
            3 => ("related", format!("/events/{id}/related"), json(&analytics::related(&snap, id, 5).unwrap())),
            4 => ("media", format!("/events/{id}/media"), json(&analytics::media(&snap, id, 12).unwrap())),
            5 => {
                let limit = rng.gen_range(1..=60);
                ("agencies", format!("/agencies?limit={limit}"), json(&analytics::agencies(&snap, limit)))
            }
            _ => ("health", "/health".to_string(), json(&analytics::health(&snap))),
        };
        let (status, _, got) = rt.block_on(get(&router, &uri));
        ensure!(status == StatusCode::OK, "{uri}: status {status}");
        ensure!(got == want, "{uri}: response differs from the in-process call");
        *by_kind.entry(kind).or_default() += 1;
    }
    let summary: Vec<String> = by_kind.iter().map(|(k, n)| format!("{k}={n}")).collect();
    Ok(format!("50 requests equal in-process results ({})", summary.join(" ")))
}

mod erased {
    pub trait Ser {
        fn value(&self) -> serde_json::Value;
    }
    impl<T: serde::Serialize> Ser for T {
        fn value(&self) -> serde_json::Value {
            serde_json::to_value(self).unwrap()
        }
    }
}

fn main() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("determinism", Box::new(determinism)),
        ("clustering-oracle-equivalence", Box::new(clustering_oracle)),
        ("unique-text-rule", Box::new(unique_text_rule)),
        ("geotag-toggle-contract", Box::new(geotag_toggle)),
        ("word-cloud-correctness", Box::new(|| word_cloud(&rt))),
        ("anger-preservation", Box::new(anger_preservation)),
        ("store-crash-safety", Box::new(store_crash_safety)),
        ("media-ranking", Box::new(media_ranking)),
        ("api-parity", Box::new(|| api_parity(&rt))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{:.1?}]", start.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{:.1?}]", start.elapsed());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
