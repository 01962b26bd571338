use std::collections::{BTreeSet, HashMap};

use act_core::annotate::{
    categorize_post, geotag_text, score_post, span_confidence, Annotator, CategoryRules, Gazetteer, GazetteerEntry, SentimentLexicon,
};
use act_core::cluster::Event;
use act_core::ingest::TrackConfig;
use act_core::parse::{NoiseFilter, NoiseRules, Post, Tokenizer};
use act_testkit::{anger_corpus, angry_recount, category_recount, raw, run_pipeline, synthetic, at_minutes, EXPLETIVE_TEMPLATES};
use proptest::prelude::*;

fn parse(text: &str, i: usize) -> Post {
    Post::parse(&raw(&format!("p{i}"), at_minutes(i as i64), &format!("u{i}"), text, None), Tokenizer::shipped(), &TrackConfig::default())
}

#[test]
fn profanity_is_never_noise() {
    let lexicon = SentimentLexicon::shipped();
    let mut filter = NoiseFilter::new(NoiseRules::shipped());
    let mut n = 0;
    for template in EXPLETIVE_TEMPLATES {
        for place in ["katoomba", "penrith", "sydney", "hobart", "brisbane"] {
            let post = parse(&template.replace("{place}", place), n);
            n += 1;
            assert!(filter.classify(&post).keep, "{}", post.text);
            assert!(score_post(&post.tokens, lexicon).is_angry, "{}", post.text);
        }
    }
    for term in lexicon.anger_terms() {
        let post = parse(&format!("{term} bushfire response"), n);
        n += 1;
        assert!(filter.classify(&post).keep, "{term}");
    }
}

#[test]
fn anger_corpus_is_retained_and_flagged() {
    let (posts, angry_ids) = anger_corpus(42);
    let (p, _) = run_pipeline(&posts);
    let kept: HashMap<&str, &act_core::store::StoredPost> = p.posts().iter().map(|s| (s.post.id.as_str(), s.as_ref())).collect();
    for id in &angry_ids {
        let s = kept.get(id.as_str()).unwrap_or_else(|| panic!("{id} dropped"));
        assert!(s.annotation.sentiment.is_angry, "{id}");
    }
    let anger: BTreeSet<String> = SentimentLexicon::shipped().anger_terms().map(String::from).collect();
    for e in p.clusters().events() {
        let members: Vec<&Post> = e.member_ids.iter().map(|id| &kept[id.as_str()].post).collect();
        assert_eq!(e.sentiment.flagged_angry, angry_recount(&members, &anger, 0.2), "{}", e.id);
    }
}

#[test]
fn event_annotations_match_recomputation() {
    let (p, _) = run_pipeline(&synthetic(31, 500));
    let annotator = Annotator::default();
    let by_id: HashMap<&str, &act_core::store::StoredPost> = p.posts().iter().map(|s| (s.post.id.as_str(), s.as_ref())).collect();
    for e in p.clusters().events() {
        let annotations: Vec<_> = e.member_ids.iter().map(|id| annotator.annotate_post(&by_id[id.as_str()].post)).collect();
        for (id, a) in e.member_ids.iter().zip(&annotations) {
            assert_eq!(&by_id[id.as_str()].annotation, a);
        }
        let cats: Vec<_> = annotations.iter().map(|a| a.category).collect();
        assert_eq!(e.category, category_recount(&cats), "{}", e.id);

        let mut fresh = Event { tallies: Default::default(), ..e.clone() };
        for a in &annotations {
            fresh.apply_annotation(a, annotator.anger_threshold);
        }
        assert_eq!(fresh.location, e.location, "{}", e.id);
        assert_eq!(fresh.sentiment, e.sentiment, "{}", e.id);
    }
}

fn place_names() -> impl Strategy<Value = Vec<(Vec<String>, u64)>> {
    let word = prop::sample::select(vec!["north", "south", "port", "mount", "lake", "glen", "bay", "creek", "river", "hill"]);
    let name = prop::collection::vec(word.prop_map(String::from), 1..4);
    prop::collection::vec((name, 1u64..1_000_000), 1..12)
}

proptest! {
    #[test]
    fn geotag_prefers_longest_span(names in place_names(), text in prop::collection::vec(prop::sample::select(vec!["north", "south", "port", "mount", "lake", "glen", "bay", "creek", "river", "hill", "fire", "smoke"]), 1..12)) {
        let entries: Vec<GazetteerEntry> = names
            .iter()
            .enumerate()
            .map(|(i, (words, pop))| GazetteerEntry {
                name: words.join(" "),
                lon: 140.0 + i as f64,
                lat: -30.0,
                population: *pop,
                country: "AU".into(),
            })
            .collect();
        let tokenizer = Tokenizer::new(Vec::<String>::new());
        let Ok(gaz) = Gazetteer::new(entries.clone(), &tokenizer) else { return Ok(()) };
        let tokens: Vec<String> = text.iter().map(|s| s.to_string()).collect();

        // brute force: every entry that occurs as a contiguous span
        let mut best: Option<(usize, u64)> = None;
        for e in gaz.entries() {
            let span: Vec<&str> = e.name.split(' ').collect();
            let occurs = tokens.windows(span.len()).any(|w| w.iter().map(String::as_str).eq(span.iter().copied()));
            if occurs {
                let key = (span.len(), e.population);
                if best.is_none_or(|b| key > b) {
                    best = Some(key);
                }
            }
        }
        let got = geotag_text(&tokens, &gaz);
        match best {
            None => prop_assert!(got.is_none()),
            Some((len, pop)) => {
                let g = got.unwrap();
                // names may repeat; longitudes are unique per entry
                let e = gaz.entries().iter().find(|e| e.name == g.place_name && e.lon == g.lon).unwrap();
                prop_assert_eq!(e.name.split(' ').count(), len);
                prop_assert_eq!(e.population, pop);
                prop_assert_eq!(g.confidence, span_confidence(len));
            }
        }
    }

    #[test]
    fn category_ignores_token_order(tokens in prop::collection::vec(prop::sample::select(vec!["fire", "flood", "storm", "quake", "ambulance", "road", "smoke", "rain", "injured", "hail"]), 0..10), seed in any::<u64>()) {
        let tokens: Vec<String> = tokens.iter().map(|s| s.to_string()).collect();
        let mut shuffled = tokens.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let rules = CategoryRules::shipped();
        prop_assert_eq!(categorize_post(&tokens, rules), categorize_post(&shuffled, rules));
    }

    #[test]
    fn sentiment_is_bounded(text in "[a-z !#@.]{0,120}") {
        let tokens = Tokenizer::shipped().tokenize(&text);
        let s = score_post(&tokens, SentimentLexicon::shipped());
        prop_assert!((-1.0..=1.0).contains(&s.polarity));
        prop_assert_eq!(s.is_angry, s.anger_hits >= 1);
    }

    #[test]
    fn post_round_trips_through_json(text in "\\PC{0,140}", id in "[a-z0-9]{1,12}", minutes in 0i64..100_000) {
        let post = Post::parse(&raw(&id, at_minutes(minutes), "someone", &text, Some((151.2, -33.9))), Tokenizer::shipped(), &TrackConfig::default());
        let back: Post = serde_json::from_str(&serde_json::to_string(&post).unwrap()).unwrap();
        prop_assert_eq!(back, post);
    }
}
