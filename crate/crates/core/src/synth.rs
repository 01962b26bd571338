//! Deterministic synthetic disaster-stream generator.
//!
//! Produces a reproducible mix of incident reports, agency warnings,
//! retweets, angry posts, media posts and noise (spam, jokes, songs,
//! repeated floods) from a seed. Every record mentions at least one of the
//! default tracked keywords.

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geo::Coords;
use crate::ingest::{RawPost, SourceTag};

/// Accounts the generator posts agency warnings from.
pub const SYNTHETIC_AGENCIES: &[&str] = &["nswrfs", "qldfes", "cfa_updates", "redcross_au", "abcemergency", "bom_au"];

const PLACES: &[(&str, f64, f64)] = &[
    ("Sydney", 151.2093, -33.8688),
    ("North Sydney", 151.2070, -33.8390),
    ("Blue Mountains", 150.3000, -33.7000),
    ("Katoomba", 150.3120, -33.7140),
    ("Springwood", 150.5640, -33.6990),
    ("Winmalee", 150.6120, -33.6790),
    ("Lithgow", 150.1370, -33.4820),
    ("Penrith", 150.6877, -33.7507),
    ("Gosford", 151.3419, -33.4245),
    ("Newcastle", 151.7817, -32.9283),
    ("Brisbane", 153.0251, -27.4698),
    ("Ipswich", 152.7600, -27.6161),
    ("Toowoomba", 151.9507, -27.5598),
    ("Bundaberg", 152.3489, -24.8661),
    ("Cairns", 145.7781, -16.9186),
    ("Melbourne", 144.9631, -37.8136),
    ("Kinglake", 145.3430, -37.5290),
    ("Gippsland", 146.5000, -38.0000),
    ("Hobart", 147.3272, -42.8821),
    ("Perth", 115.8605, -31.9505),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Fire,
    Flood,
    Storm,
    Quake,
    Medical,
}

const KINDS: &[Kind] = &[Kind::Fire, Kind::Fire, Kind::Fire, Kind::Flood, Kind::Flood, Kind::Storm, Kind::Quake, Kind::Medical];

fn reports(kind: Kind) -> &'static [&'static str] {
    match kind {
        Kind::Fire => &[
            "Bushfire burning near {place}, smoke everywhere #bushfire",
            "Huge blaze at {place} right now, fire crews on scene",
            "Fire front approaching {place} #nswfires",
            "Smoke haze over {place} from the bushfire",
            "Evacuate now if you are near {place}, fire out of control",
            "Embers landing in backyards at {place}, fire is close",
        ],
        Kind::Flood => &[
            "Flood waters rising in {place} #flood",
            "Roads cut by flooding around {place}",
            "{place} streets inundated, flood rescue underway",
            "Flash flood warning for {place}, river still rising",
        ],
        Kind::Storm => &[
            "Severe storm hitting {place}, hail the size of golf balls",
            "Cyclone warning issued for {place} #storm",
            "Storm damage across {place}, trees down and power out",
        ],
        Kind::Quake => &[
            "Earthquake felt in {place}! Buildings shaking",
            "Small quake near {place}, anyone else feel the tremor? #earthquake",
        ],
        Kind::Medical => &[
            "Ambulance crews treating injured residents at {place}",
            "Several ambulance units heading to {place}, people injured",
        ],
    }
}

fn hazard_word(kind: Kind) -> &'static str {
    match kind {
        Kind::Fire => "Bushfire",
        Kind::Flood => "Flood",
        Kind::Storm => "Storm",
        Kind::Quake => "Earthquake",
        Kind::Medical => "Emergency",
    }
}

const AGENCY_TEMPLATES: &[&str] = &[
    "Emergency warning: {hazard} at {place}. Follow advice from authorities",
    "Watch and act: {hazard} near {place}. Leave now if your plan is to leave",
    "Advice: {hazard} at {place} is being monitored. Stay informed",
];

const ANGRY_TEMPLATES: &[&str] = &[
    "{place} fire response is fucking useless, where are the trucks?",
    "Absolutely furious, no warning for {place} before the bushfire hit. Disgrace.",
    "WTF is going on with the flood alerts in {place}, bloody hopeless",
    "Still no power after the storm in {place}, this is bullshit",
];

const MEDIA_TEMPLATES: &[&str] = &[
    "Photo of the smoke over {place} https://img.example.org/{n}.jpg",
    "Flood water at {place} this morning https://img.example.org/{n}.png",
    "Look at this fire near {place} https://photos.example.com/p/{n}.JPG?size=large",
];

const NOISE_TEMPLATES: &[&str] = &[
    "Click here to win a free phone #bushfire http://spam.example/{n}",
    "Buy followers now, cheap! #fire #flood",
    "Now playing: Ring of Fire by Johnny Cash",
    "Knock knock. Who's there? Flood.",
    "My mixtape is fire, go listen",
];

const GENERIC_TEMPLATES: &[&str] = &[
    "Thinking of everyone affected by the fire tonight",
    "Stay safe everyone, check the emergency updates",
    "Donate to the flood appeal if you can",
];

const SUFFIXES: &[&str] = &["", "", "", " please share", " stay safe", " right now", " #auspol", " so scary", " thanks to the volunteers"];

#[derive(Debug, Clone)]
struct Incident {
    kind: Kind,
    place: usize,
    until: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    rng: ChaCha8Rng,
    seed: u64,
    count: usize,
    produced: usize,
    clock: DateTime<Utc>,
    incidents: Vec<Incident>,
    last: Option<(String, String)>,
}

fn base_time() -> DateTime<Utc> {
    DateTime::from_timestamp(1_381_968_000, 0).expect("valid base time") // 2013-10-17T00:00:00Z
}

impl SyntheticGenerator {
    pub fn new(seed: u64, count: usize) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            count,
            produced: 0,
            clock: base_time(),
            incidents: Vec::new(),
            last: None,
        }
    }

    fn pick<'a>(&mut self, options: &'a [&'a str]) -> &'a str {
        options.choose(&mut self.rng).expect("non-empty template list")
    }

    fn incident(&mut self) -> Incident {
        let now = self.clock;
        self.incidents.retain(|i| i.until > now);
        if self.incidents.is_empty() || (self.incidents.len() < 6 && self.rng.gen_bool(0.03)) {
            let kind = *KINDS.choose(&mut self.rng).expect("kinds");
            let place = self.rng.gen_range(0..PLACES.len());
            let hours = self.rng.gen_range(2..10);
            self.incidents.push(Incident {
                kind,
                place,
                until: now + Duration::hours(hours),
            });
        }
        self.incidents.choose(&mut self.rng).expect("at least one incident").clone()
    }

    fn jittered(&mut self, place: usize) -> Option<Coords> {
        if !self.rng.gen_bool(0.3) {
            return None;
        }
        let (_, lon, lat) = PLACES[place];
        Some(Coords::new(
            lon + self.rng.gen_range(-0.05..0.05),
            lat + self.rng.gen_range(-0.05..0.05),
        ))
    }

    fn compose(&mut self) -> (String, String, Option<Coords>) {
        let n = self.produced;
        let roll: f64 = self.rng.gen();
        let user = format!("user{}", self.rng.gen_range(0..400));

        if roll < 0.04 {
            if let Some((author, text)) = self.last.clone() {
                return (author, text, None);
            }
        }
        let incident = self.incident();
        let place = PLACES[incident.place].0;
        let fill = |t: &str, hazard: &str| {
            t.replace("{place}", place)
                .replace("{hazard}", hazard)
                .replace("{n}", &n.to_string())
        };

        if roll < 0.58 {
            let t = self.pick(reports(incident.kind));
            let suffix = self.pick(SUFFIXES);
            let coords = self.jittered(incident.place);
            (user, format!("{}{}", fill(t, ""), suffix), coords)
        } else if roll < 0.66 {
            let agency = self.pick(SYNTHETIC_AGENCIES).to_string();
            let t = self.pick(AGENCY_TEMPLATES);
            (agency, fill(t, hazard_word(incident.kind)), None)
        } else if roll < 0.76 {
            let agency = self.pick(SYNTHETIC_AGENCIES);
            let t = self.pick(AGENCY_TEMPLATES);
            (user, format!("RT @{agency}: {}", fill(t, hazard_word(incident.kind))), None)
        } else if roll < 0.83 {
            let t = self.pick(ANGRY_TEMPLATES);
            (user, fill(t, ""), None)
        } else if roll < 0.87 {
            let t = self.pick(MEDIA_TEMPLATES);
            let coords = self.jittered(incident.place);
            (user, fill(t, ""), coords)
        } else if roll < 0.94 {
            let t = self.pick(NOISE_TEMPLATES);
            (user, fill(t, ""), None)
        } else {
            let t = self.pick(GENERIC_TEMPLATES);
            (user, t.to_string(), None)
        }
    }
}

impl Iterator for SyntheticGenerator {
    type Item = RawPost;

    fn next(&mut self) -> Option<RawPost> {
        if self.produced >= self.count {
            return None;
        }
        self.clock += Duration::seconds(self.rng.gen_range(5..120));
        let (author, text, coords) = self.compose();
        self.last = Some((author.clone(), text.clone()));
        let post = RawPost {
            id: format!("s{}-{:06}", self.seed, self.produced),
            created_at: self.clock,
            author,
            text,
            coords,
            source_tag: SourceTag::Synthetic,
        };
        self.produced += 1;
        Some(post)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.produced;
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{matches_track, TrackConfig};

    #[test]
    fn same_seed_same_sequence() {
        let a: Vec<_> = SyntheticGenerator::new(42, 100).collect();
        let b: Vec<_> = SyntheticGenerator::new(42, 100).collect();
        assert_eq!(a.len(), 100);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c: Vec<_> = SyntheticGenerator::new(43, 100).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn every_record_is_tracked_by_default() {
        let cfg = TrackConfig::default();
        assert!(SyntheticGenerator::new(1, 2000).all(|p| matches_track(&p, &cfg)));
    }

    #[test]
    fn timestamps_increase_and_ids_unique() {
        let posts: Vec<_> = SyntheticGenerator::new(3, 500).collect();
        assert!(posts.windows(2).all(|w| w[0].created_at < w[1].created_at));
        let ids: std::collections::HashSet<_> = posts.iter().map(|p| &p.id).collect();
        assert_eq!(ids.len(), 500);
    }
}
