//! Synthetic posts with planted keyword signals, simulated annotators and a
//! noisy raw stream, for demos and end-to-end tests.

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, LabelValues, GOVERNMENT_SUPPORT, IRRELEVANT, MEASURE_SUPPORT, RELEVANT, TOPICS};
use crate::ingest::{Post, RawRecord};
use crate::labeling::{LabelError, LabelRecord, LabelStore};
use crate::time::format_instant;

/// Words planted for each topic, in the order of [`TOPICS`].
pub const TOPIC_WORDS: [[&str; 3]; 9] = [
    ["mondmasker", "masque", "facemask"],
    ["avondklok", "couvre-feu", "curfew"],
    ["quarantaine", "isolement", "selfisolation"],
    ["lockdown", "confinement", "stayhome"],
    ["scholen", "écoles", "classroom"],
    ["sneltest", "dépistage", "testcentre"],
    ["horeca", "restaurants", "terrasses"],
    ["vaccin", "vaccination", "jab"],
    ["maatregel", "mesure", "regulation"],
];

/// Words planted for each measure-support value; not-applicable has none.
pub const STANCE_WORDS: [&[&str]; 4] = [
    &["overdreven", "liberticide", "absurd"],
    &["terecht", "raisonnable", "sensible"],
    &["strenger", "insuffisant", "tooweak"],
    &[],
];

pub const GOVERNMENT_WORDS: [&[&str]; 3] = [&["bravo", "merci", "welldone"], &["schande", "honte", "incompetent"], &[]];

const NEWS_WORDS: [&str; 8] = ["persbericht", "communiqué", "breaking", "update", "cijfers", "chiffres", "live", "dashboard"];
const FILLER: [&str; 12] = [
    "vandaag", "aujourd'hui", "today", "belgië", "belgique", "brussel", "iedereen", "tout", "people", "week", "nieuws", "encore",
];
const OPINION: [&str; 6] = ["ik vind", "je pense", "i think", "eerlijk gezegd", "franchement", "honestly"];
const ANCHORS: [&str; 2] = ["corona", "covid"];
const LANGS: [(&str, f64); 3] = [("nl", 0.5), ("fr", 0.35), ("en", 0.15)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub posts: usize,
    pub days: u32,
    pub start: NaiveDate,
    /// Exact share of relevant posts.
    pub relevance_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            posts: 5000,
            days: 30,
            start: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
            relevance_rate: 0.53,
            seed: 2021,
        }
    }
}

/// A generated post with the labels its text was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPost {
    pub post: Post,
    pub truth: LabelValues,
}

fn bump(t: f64, centre: f64, width: f64) -> f64 {
    (-((t - centre) / width).powi(2)).exp()
}

/// Topic weights on day fraction `t` in [0, 1]: curfew discussion swells
/// twice during the period.
fn topic_weights(t: f64) -> Vec<f64> {
    TOPICS
        .iter()
        .map(|&topic| match topic {
            "curfew" => 0.6 + 2.0 * bump(t, 0.3, 0.1) + 1.5 * bump(t, 0.75, 0.08),
            "vaccine" => 0.5 + t,
            "lockdown" | "masks" => 0.8,
            _ => 0.4,
        })
        .collect()
}

/// Measure-support weights in the order of [`MEASURE_SUPPORT`]: "too strict"
/// grows over the period.
fn stance_weights(t: f64) -> [f64; 4] {
    [0.1 + 0.5 * t, 0.25, 0.15, 0.5 - 0.3 * t]
}

fn pick<'a, R: Rng>(rng: &mut R, words: &[&'a str]) -> &'a str {
    words[rng.gen_range(0..words.len())]
}

/// Generates `config.posts` posts spread over `config.days` days, ordered by
/// time. Every post mentions a collection term; relevant posts carry their
/// topic and stance words, irrelevant ones read like news updates.
pub fn generate_corpus(config: &SynthConfig) -> Vec<SyntheticPost> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_relevant = (config.posts as f64 * config.relevance_rate).round() as usize;
    let mut relevant: Vec<bool> = (0..config.posts).map(|i| i < n_relevant).collect();
    relevant.shuffle(&mut rng);
    let lang_dist = WeightedIndex::new(LANGS.iter().map(|l| l.1)).expect("weights");
    let gov_dist = WeightedIndex::new([0.3, 0.3, 0.4]).expect("weights");
    let day_zero = Utc.from_utc_datetime(&config.start.and_hms_opt(0, 0, 0).expect("midnight"));
    let days = config.days.max(1);

    let mut out: Vec<SyntheticPost> = relevant
        .into_iter()
        .enumerate()
        .map(|(i, is_relevant)| {
            let day = rng.gen_range(0..days);
            let t = day as f64 / days.saturating_sub(1).max(1) as f64;
            // 06:00 to 20:59 UTC stays on the same Brussels calendar day
            let created_at = day_zero + Duration::days(day as i64) + Duration::seconds(rng.gen_range(6 * 3600..21 * 3600));
            let mut words: Vec<String> = vec![pick(&mut rng, &ANCHORS).into(), pick(&mut rng, &FILLER).into()];
            let truth = if is_relevant {
                let topic = WeightedIndex::new(topic_weights(t)).expect("weights").sample(&mut rng);
                let stance = WeightedIndex::new(stance_weights(t)).expect("weights").sample(&mut rng);
                let gov = gov_dist.sample(&mut rng);
                words.push(pick(&mut rng, &OPINION).into());
                words.push(pick(&mut rng, &TOPIC_WORDS[topic]).into());
                if let Some(w) = STANCE_WORDS[stance].choose(&mut rng) {
                    words.push((*w).into());
                }
                if let Some(w) = GOVERNMENT_WORDS[gov].choose(&mut rng) {
                    words.push((*w).into());
                }
                LabelValues {
                    topic: Some(TOPICS[topic].into()),
                    measure_support: MEASURE_SUPPORT[stance].into(),
                    government_support: GOVERNMENT_SUPPORT[gov].into(),
                    relevance: RELEVANT.into(),
                }
            } else {
                words.push(pick(&mut rng, &NEWS_WORDS).into());
                words.push(pick(&mut rng, &NEWS_WORDS).into());
                if rng.gen_bool(0.3) {
                    let topic = rng.gen_range(0..TOPICS.len());
                    words.push(pick(&mut rng, &TOPIC_WORDS[topic]).into());
                }
                LabelValues::irrelevant()
            };
            words.push(format!("{}", rng.gen_range(1..500)));
            words.shuffle(&mut rng);
            let lang = LANGS[lang_dist.sample(&mut rng)].0;
            SyntheticPost {
                post: Post {
                    id: format!("s{i:07}"),
                    text: words.join(" "),
                    lang: lang.into(),
                    created_at,
                    place_country: Some("BE".into()),
                    author_ref: format!("user{}", rng.gen_range(0..config.posts.max(1) / 3 + 1)),
                },
                truth,
            }
        })
        .collect();
    out.sort_by(|a, b| (a.post.created_at, &a.post.id).cmp(&(b.post.created_at, &b.post.id)));
    out
}

/// Flips one support axis of a relevant post to another value.
fn perturb<R: Rng>(truth: &LabelValues, rng: &mut R) -> LabelValues {
    let mut v = truth.clone();
    if v.relevance == IRRELEVANT {
        return v;
    }
    if rng.gen_bool(0.5) {
        let others: Vec<&str> = MEASURE_SUPPORT.iter().copied().filter(|s| *s != v.measure_support).collect();
        v.measure_support = pick(rng, &others).into();
    } else {
        let others: Vec<&str> = GOVERNMENT_SUPPORT.iter().copied().filter(|s| *s != v.government_support).collect();
        v.government_support = pick(rng, &others).into();
    }
    v
}

/// Every annotator labels every post in round 1, deviating from the truth
/// with probability `error_rate`. Agreeing posts resolve as unanimous and
/// conflicts are resolved to the truth by `resolver`.
pub fn simulate_labels(
    posts: &[SyntheticPost],
    codebook: &Codebook,
    annotators: &[&str],
    error_rate: f64,
    seed: u64,
) -> Result<LabelStore, LabelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = LabelStore::new(codebook.clone(), posts.iter().map(|p| p.post.id.clone()));
    for p in posts {
        for annotator in annotators {
            let values = if rng.gen_bool(error_rate) { perturb(&p.truth, &mut rng) } else { p.truth.clone() };
            store.record_label(LabelRecord {
                post_id: p.post.id.clone(),
                annotator_id: annotator.to_string(),
                round: 1,
                values,
                labeled_at: p.post.created_at + Duration::days(1),
            })?;
        }
    }
    let conflicts = store.auto_resolve();
    for post_id in conflicts {
        let truth = posts.iter().find(|p| p.post.id == post_id).map(|p| p.truth.clone());
        store.resolve_gold(&post_id, truth, "resolver")?;
    }
    Ok(store)
}

/// A raw record stream around `posts`: the posts themselves plus records
/// each collection filter must reject (wrong language, wrong or missing
/// country, outside the window, no search term) and late duplicates.
pub fn raw_stream(posts: &[SyntheticPost], seed: u64) -> Vec<RawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<RawRecord> = Vec::with_capacity(posts.len() * 11 / 10);
    let raw = |p: &Post| RawRecord {
        id: p.id.clone(),
        text: p.text.clone(),
        lang: p.lang.clone(),
        created_at: format_instant(p.created_at),
        place_country: p.place_country.clone(),
        author_ref: p.author_ref.clone(),
    };
    for (i, sp) in posts.iter().enumerate() {
        out.push(raw(&sp.post));
        if i % 20 != 0 {
            continue;
        }
        let mut noise = raw(&sp.post);
        noise.id = format!("{}-x", sp.post.id);
        match rng.gen_range(0..6) {
            0 => noise.lang = "de".into(),
            1 => noise.place_country = Some("NL".into()),
            2 => noise.place_country = None,
            3 => noise.created_at = "2020-06-01T12:00:00Z".into(),
            4 => noise.text = "mooi weer vandaag aan zee".into(),
            _ => {
                noise.id = sp.post.id.clone();
                noise.created_at = format_instant(sp.post.created_at + Duration::hours(2));
            }
        }
        out.push(noise);
    }
    out
}
