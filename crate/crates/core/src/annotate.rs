//! Event enrichment: gazetteer geotagging, keyword categories and lexicon
//! sentiment with anger capture.
//!
//! Per-post annotations are folded into [`EventTallies`], from which the
//! event-level location, category and sentiment are derived. The tallies
//! are order-preserving sums, so an event rebuilt from its members yields the
//! same values as one maintained incrementally.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Coords;
use crate::parse::{Post, Tokenizer};

const SHIPPED_GAZETTEER: &str = include_str!("../resources/gazetteer.csv");
const SHIPPED_LEXICON: &str = include_str!("../resources/sentiment_lexicon.csv");
const SHIPPED_ANGER: &str = include_str!("../resources/anger_terms.txt");
const SHIPPED_CATEGORIES: &str = include_str!("../resources/category_rules.json");

/// Native coordinates within this distance snap to the nearest gazetteer place.
pub const SNAP_RADIUS_KM: f64 = 50.0;

pub const DEFAULT_ANGER_THRESHOLD: f64 = 0.2;

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Open {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Gazetteer

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub name: String,
    pub lon: f64,
    pub lat: f64,
    pub population: u64,
    pub country: String,
}

impl GazetteerEntry {
    pub fn coords(&self) -> Coords {
        Coords::new(self.lon, self.lat)
    }
}

#[derive(Debug, Deserialize)]
struct GazetteerRow {
    name: String,
    lat: f64,
    lon: f64,
    population: u64,
    country: String,
}

#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    by_span: HashMap<Vec<String>, Vec<usize>>,
    max_span: usize,
}

impl Gazetteer {
    /// Names are matched against post tokens, so they go through the same
    /// tokenizer; a name that tokenizes to nothing is rejected.
    pub fn new(entries: Vec<GazetteerEntry>, tokenizer: &Tokenizer) -> Result<Self> {
        let mut by_span: HashMap<Vec<String>, Vec<usize>> = HashMap::new();
        let mut max_span = 0;
        for (i, e) in entries.iter().enumerate() {
            if !e.coords().is_valid() {
                return Err(Error::resource("gazetteer", format!("{:?}: coordinates out of range", e.name)));
            }
            let span = tokenizer.tokenize(&e.name);
            if span.is_empty() {
                return Err(Error::resource("gazetteer", format!("{:?}: name has no matchable tokens", e.name)));
            }
            max_span = max_span.max(span.len());
            by_span.entry(span).or_default().push(i);
        }
        Ok(Self {
            entries,
            by_span,
            max_span,
        })
    }

    pub fn from_csv(body: &str, origin: &str) -> Result<Self> {
        Self::from_csv_with(body, origin, Tokenizer::shipped())
    }

    pub fn from_csv_with(body: &str, origin: &str, tokenizer: &Tokenizer) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
        let mut entries = Vec::new();
        for row in reader.deserialize::<GazetteerRow>() {
            let row = row.map_err(|e| Error::resource(origin, e))?;
            let name = row.name.trim().to_lowercase();
            if name.is_empty() {
                return Err(Error::resource(origin, "empty place name"));
            }
            entries.push(GazetteerEntry {
                name,
                lon: row.lon,
                lat: row.lat,
                population: row.population,
                country: row.country,
            });
        }
        Self::new(entries, tokenizer)
    }

    pub fn load(path: &Path, tokenizer: &Tokenizer) -> Result<Self> {
        Self::from_csv_with(&read_file(path)?, &path.display().to_string(), tokenizer)
    }

    pub fn shipped() -> &'static Gazetteer {
        static GAZ: OnceLock<Gazetteer> = OnceLock::new();
        GAZ.get_or_init(|| Gazetteer::from_csv(SHIPPED_GAZETTEER, "gazetteer.csv").expect("shipped gazetteer is valid"))
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, name: &str) -> Option<&GazetteerEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn nearest_within(&self, point: Coords, max_km: f64) -> Option<&GazetteerEntry> {
        self.entries
            .iter()
            .map(|e| (e.coords().distance_km(&point), e))
            .filter(|(d, _)| *d <= max_km)
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.population.cmp(&a.1.population)))
            .map(|(_, e)| e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoTag {
    pub place_name: String,
    pub lon: f64,
    pub lat: f64,
    pub confidence: f64,
}

/// Longer matched spans are more specific; a four-token match is certain.
pub fn span_confidence(span_len: usize) -> f64 {
    let len = span_len as f64;
    (len / 4f64.min(len + 1.0)).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Finds gazetteer names as contiguous token spans. Longest span wins, then
/// the most populous place, then the earliest occurrence.
pub fn geotag_text(tokens: &[String], gazetteer: &Gazetteer) -> Option<GeoTag> {
    let mut best: Option<(usize, u64, usize, &GazetteerEntry)> = None;
    for start in 0..tokens.len() {
        let longest = gazetteer.max_span.min(tokens.len() - start);
        for len in 1..=longest {
            let Some(ids) = gazetteer.by_span.get(&tokens[start..start + len]) else {
                continue;
            };
            for &i in ids {
                let e = &gazetteer.entries[i];
                let better = match best {
                    None => true,
                    Some((blen, bpop, _, _)) => len > blen || (len == blen && e.population > bpop),
                };
                if better {
                    best = Some((len, e.population, start, e));
                }
            }
        }
    }
    best.map(|(len, _, _, e)| GeoTag {
        place_name: e.name.clone(),
        lon: e.lon,
        lat: e.lat,
        confidence: span_confidence(len),
    })
}

// ---------------------------------------------------------------------------
// Location resolution

/// One piece of geographic evidence contributed by a member post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationCandidate {
    pub place_name: String,
    pub lon: f64,
    pub lat: f64,
    pub confidence: f64,
    pub population: u64,
}

/// Native coordinates snap to a gazetteer place within [`SNAP_RADIUS_KM`],
/// otherwise they stand as a raw point named by its coordinates. Native
/// coordinates carry confidence 1.
pub fn location_candidates(post: &Post, geotag: Option<&GeoTag>, gazetteer: &Gazetteer) -> Vec<LocationCandidate> {
    let mut out = Vec::with_capacity(2);
    if let Some(c) = post.coords {
        match gazetteer.nearest_within(c, SNAP_RADIUS_KM) {
            Some(e) => out.push(LocationCandidate {
                place_name: e.name.clone(),
                lon: e.lon,
                lat: e.lat,
                confidence: 1.0,
                population: e.population,
            }),
            None => out.push(LocationCandidate {
                place_name: format!("{:.4},{:.4}", c.lat, c.lon),
                lon: c.lon,
                lat: c.lat,
                confidence: 1.0,
                population: 0,
            }),
        }
    }
    if let Some(tag) = geotag {
        let population = gazetteer.lookup(&tag.place_name).map_or(0, |e| e.population);
        out.push(LocationCandidate {
            place_name: tag.place_name.clone(),
            lon: tag.lon,
            lat: tag.lat,
            confidence: tag.confidence,
            population,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLocation {
    pub lon: f64,
    pub lat: f64,
    pub place_name: String,
    pub confidence: f64,
}

impl EventLocation {
    pub fn coords(&self) -> Coords {
        Coords::new(self.lon, self.lat)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlaceTally {
    pub count: u64,
    pub total_confidence: f64,
    pub population: u64,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LocationTally {
    pub places: BTreeMap<String, PlaceTally>,
}

impl LocationTally {
    pub fn add(&mut self, c: &LocationCandidate) {
        let t = self.places.entry(c.place_name.clone()).or_insert_with(|| PlaceTally {
            population: c.population,
            lon: c.lon,
            lat: c.lat,
            ..PlaceTally::default()
        });
        t.count += 1;
        t.total_confidence += c.confidence;
    }

    /// Modal place; ties go to higher total confidence, then population,
    /// then name order. The reported confidence is the mean over the
    /// winning place's candidates.
    pub fn resolve(&self) -> Option<EventLocation> {
        self.places
            .iter()
            .max_by(|(an, a), (bn, b)| {
                a.count
                    .cmp(&b.count)
                    .then(a.total_confidence.total_cmp(&b.total_confidence))
                    .then(a.population.cmp(&b.population))
                    .then(bn.cmp(an))
            })
            .map(|(name, t)| EventLocation {
                lon: t.lon,
                lat: t.lat,
                place_name: name.clone(),
                confidence: (t.total_confidence / t.count as f64).clamp(f64::MIN_POSITIVE, 1.0),
            })
    }
}

pub fn resolve_event_location<'a>(candidates: impl IntoIterator<Item = &'a LocationCandidate>) -> Option<EventLocation> {
    let mut tally = LocationTally::default();
    for c in candidates {
        tally.add(c);
    }
    tally.resolve()
}

// ---------------------------------------------------------------------------
// Categories

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Fire,
    Flood,
    Storm,
    Earthquake,
    Medical,
    Other,
}

impl Category {
    /// Every category, highest priority first.
    pub const ALL: [Category; 6] = [
        Category::Fire,
        Category::Flood,
        Category::Storm,
        Category::Earthquake,
        Category::Medical,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Fire => "fire",
            Category::Flood => "flood",
            Category::Storm => "storm",
            Category::Earthquake => "earthquake",
            Category::Medical => "medical",
            Category::Other => "other",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryRules {
    keywords: BTreeMap<Category, BTreeSet<String>>,
}

impl CategoryRules {
    pub fn from_json(body: &str, origin: &str) -> Result<Self> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(body).map_err(|e| Error::resource(origin, e))?;
        let mut keywords = BTreeMap::new();
        for (name, words) in raw {
            let cat: Category = name.parse().map_err(|e| Error::resource(origin, e))?;
            if cat == Category::Other {
                return Err(Error::resource(origin, "`other` is the fallback and takes no keywords"));
            }
            keywords.insert(cat, words.iter().map(|w| w.trim().to_lowercase()).filter(|w| !w.is_empty()).collect());
        }
        Ok(Self { keywords })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_file(path)?, &path.display().to_string())
    }

    pub fn shipped() -> &'static CategoryRules {
        static RULES: OnceLock<CategoryRules> = OnceLock::new();
        RULES.get_or_init(|| CategoryRules::from_json(SHIPPED_CATEGORIES, "category_rules.json").expect("shipped category rules are valid"))
    }

    pub fn keywords(&self, category: Category) -> impl Iterator<Item = &str> {
        self.keywords.get(&category).into_iter().flatten().map(String::as_str)
    }
}

/// First category in priority order with a keyword among the tokens.
pub fn categorize_post(tokens: &[String], rules: &CategoryRules) -> Category {
    let present: HashSet<&str> = tokens.iter().map(String::as_str).collect();
    for (cat, words) in &rules.keywords {
        if words.iter().any(|w| present.contains(w.as_str())) {
            return *cat;
        }
    }
    Category::Other
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTally {
    pub counts: [u64; 6],
}

impl CategoryTally {
    pub fn add(&mut self, c: Category) {
        self.counts[c.index()] += 1;
    }

    /// Plurality over non-`other` votes, ties to the higher-priority category.
    pub fn winner(&self) -> Category {
        let mut best = Category::Other;
        let mut best_count = 0;
        for c in Category::ALL.into_iter().filter(|c| *c != Category::Other) {
            if self.counts[c.index()] > best_count {
                best = c;
                best_count = self.counts[c.index()];
            }
        }
        best
    }
}

pub fn categorize_event(member_categories: impl IntoIterator<Item = Category>) -> Category {
    let mut tally = CategoryTally::default();
    member_categories.into_iter().for_each(|c| tally.add(c));
    tally.winner()
}

// ---------------------------------------------------------------------------
// Sentiment

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentimentLexicon {
    polarity: HashMap<String, f64>,
    anger: HashSet<String>,
}

#[derive(Debug, Deserialize)]
struct LexiconRow {
    term: String,
    polarity: f64,
}

impl SentimentLexicon {
    pub fn new(polarity: HashMap<String, f64>, anger: HashSet<String>) -> Result<Self> {
        if let Some((t, p)) = polarity.iter().find(|(_, p)| !(-1.0..=1.0).contains(*p)) {
            return Err(Error::resource("sentiment lexicon", format!("{t:?}: polarity {p} outside [-1, 1]")));
        }
        Ok(Self { polarity, anger })
    }

    pub fn parse(lexicon_csv: &str, anger_list: &str, origin: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(lexicon_csv.as_bytes());
        let mut polarity = HashMap::new();
        for row in reader.deserialize::<LexiconRow>() {
            let row = row.map_err(|e| Error::resource(origin, e))?;
            polarity.insert(row.term.to_lowercase(), row.polarity);
        }
        let anger = anger_list
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        Self::new(polarity, anger)
    }

    pub fn load(lexicon: &Path, anger: &Path) -> Result<Self> {
        Self::parse(&read_file(lexicon)?, &read_file(anger)?, &lexicon.display().to_string())
    }

    pub fn shipped() -> &'static SentimentLexicon {
        static LEX: OnceLock<SentimentLexicon> = OnceLock::new();
        LEX.get_or_init(|| SentimentLexicon::parse(SHIPPED_LEXICON, SHIPPED_ANGER, "sentiment_lexicon.csv").expect("shipped lexicon is valid"))
    }

    pub fn is_anger_term(&self, term: &str) -> bool {
        self.anger.contains(term)
    }

    pub fn anger_terms(&self) -> impl Iterator<Item = &str> {
        self.anger.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SentimentScore {
    pub polarity: f64,
    pub anger_hits: u32,
    pub is_angry: bool,
}

pub fn score_post(tokens: &[String], lexicon: &SentimentLexicon) -> SentimentScore {
    let mut sum = 0.0;
    let mut matched = 0u32;
    let mut anger_hits = 0u32;
    for t in tokens {
        if let Some(p) = lexicon.polarity.get(t) {
            sum += p;
            matched += 1;
        }
        if lexicon.anger.contains(t) {
            anger_hits += 1;
        }
    }
    let polarity = if matched == 0 { 0.0 } else { (sum / matched as f64).clamp(-1.0, 1.0) };
    SentimentScore {
        polarity,
        anger_hits,
        is_angry: anger_hits >= 1,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSentiment {
    pub mean_polarity: f64,
    pub angry_fraction: f64,
    pub flagged_angry: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SentimentTally {
    pub members: u64,
    pub polarity_sum: f64,
    pub angry: u64,
}

impl SentimentTally {
    pub fn add(&mut self, s: &SentimentScore) {
        self.members += 1;
        self.polarity_sum += s.polarity;
        if s.is_angry {
            self.angry += 1;
        }
    }

    pub fn summarize(&self, anger_threshold: f64) -> EventSentiment {
        if self.members == 0 {
            return EventSentiment::default();
        }
        let n = self.members as f64;
        let angry_fraction = self.angry as f64 / n;
        EventSentiment {
            mean_polarity: (self.polarity_sum / n).clamp(-1.0, 1.0),
            angry_fraction,
            flagged_angry: angry_fraction >= anger_threshold,
        }
    }
}

pub fn aggregate_event_sentiment<'a>(scores: impl IntoIterator<Item = &'a SentimentScore>, anger_threshold: f64) -> EventSentiment {
    let mut tally = SentimentTally::default();
    scores.into_iter().for_each(|s| tally.add(s));
    tally.summarize(anger_threshold)
}

// ---------------------------------------------------------------------------
// Per-post and per-event annotation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostAnnotation {
    pub geotag: Option<GeoTag>,
    pub category: Category,
    pub sentiment: SentimentScore,
    pub location_candidates: Vec<LocationCandidate>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTallies {
    pub category: CategoryTally,
    pub sentiment: SentimentTally,
    pub location: LocationTally,
}

impl EventTallies {
    pub fn add(&mut self, a: &PostAnnotation) {
        self.category.add(a.category);
        self.sentiment.add(&a.sentiment);
        for c in &a.location_candidates {
            self.location.add(c);
        }
    }
}

/// Loaded, read-only enrichment resources.
#[derive(Debug, Clone)]
pub struct Annotator {
    pub gazetteer: Gazetteer,
    pub categories: CategoryRules,
    pub lexicon: SentimentLexicon,
    pub anger_threshold: f64,
}

impl Default for Annotator {
    fn default() -> Self {
        Self {
            gazetteer: Gazetteer::shipped().clone(),
            categories: CategoryRules::shipped().clone(),
            lexicon: SentimentLexicon::shipped().clone(),
            anger_threshold: DEFAULT_ANGER_THRESHOLD,
        }
    }
}

impl Annotator {
    pub fn annotate_post(&self, post: &Post) -> PostAnnotation {
        let geotag = geotag_text(&post.tokens, &self.gazetteer);
        let location_candidates = location_candidates(post, geotag.as_ref(), &self.gazetteer);
        PostAnnotation {
            category: categorize_post(&post.tokens, &self.categories),
            sentiment: score_post(&post.tokens, &self.lexicon),
            geotag,
            location_candidates,
        }
    }
}
