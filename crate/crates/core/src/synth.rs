//! Seeded synthetic moderation corpus with a planted ruleset.
//!
//! Hateful documents come in four families: hostility verbs the rules know
//! (`hate`, `loathe`), paraphrased hostility verbs they do not, the exact
//! dehumanizing phrase `are vermin`, and paraphrased dehumanizing nouns.
//! Benign documents are mundane complaints that also say `hate`, positive
//! statements about the same target groups, and neutral chatter. The planted
//! `contains("hate")` rule therefore over-generalizes and
//! `contains("are vermin")` is fragile. Target groups are invented words.

use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Split};
use crate::evalkit::{metrics, Confusion};
use crate::induce::Rationale;
use crate::rules::{Provenance, Rule, Ruleset, TextView};

pub const OVER_GENERAL_RULE: &str = "hate-any";
pub const LOATHE_RULE: &str = "loathe-any";
pub const FRAGILE_RULE: &str = "vermin-phrase";

const TARGETS: &[&str] = &[
    "zorbians", "klemts", "vardani", "pellites", "quorins", "mistrali",
];
const COVERED_VERBS: &[&str] = &["hate", "loathe"];
const PARAPHRASE_VERBS: &[&str] = &["despise", "detest", "abhor", "resent"];
const PARAPHRASE_NOUNS: &[&str] = &["parasites", "rats", "filth", "subhuman", "pests"];
const MUNDANE: &[&str] = &[
    "mondays",
    "traffic",
    "homework",
    "rain",
    "queues",
    "taxes",
    "mosquitoes",
    "deadlines",
];
const PRAISE: &[&str] = &[
    "wonderful",
    "kind",
    "welcome",
    "brilliant",
    "generous",
    "hardworking",
];
const PLACES: &[&str] = &["market", "park", "library", "station", "cafe"];
const THINGS: &[&str] = &["coffee", "movie", "game", "bus", "concert"];
const MOODS: &[&str] = &["fine", "late", "great", "cold", "loud"];
const FILLER: &[&str] = &[
    "honestly",
    "seriously",
    "lol",
    "today",
    "again",
    "ok",
    "really",
    "yeah",
    "tbh",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    HostileCovered,
    HostileParaphrase,
    DehumanizingCovered,
    DehumanizingParaphrase,
    MundaneComplaint,
    PositiveMention,
    Neutral,
}

impl Family {
    const WEIGHTED: [(Family, u32); 7] = [
        (Family::HostileCovered, 18),
        (Family::HostileParaphrase, 12),
        (Family::DehumanizingCovered, 8),
        (Family::DehumanizingParaphrase, 12),
        (Family::MundaneComplaint, 15),
        (Family::PositiveMention, 15),
        (Family::Neutral, 20),
    ];

    pub fn label(self) -> u8 {
        u8::from(matches!(
            self,
            Family::HostileCovered
                | Family::HostileParaphrase
                | Family::DehumanizingCovered
                | Family::DehumanizingParaphrase
        ))
    }

    pub fn is_dehumanizing(self) -> bool {
        matches!(
            self,
            Family::DehumanizingCovered | Family::DehumanizingParaphrase
        )
    }

    fn draw<R: Rng>(rng: &mut R) -> Self {
        let total: u32 = Self::WEIGHTED.iter().map(|(_, w)| w).sum();
        let mut x = rng.random_range(0..total);
        for (f, w) in Self::WEIGHTED {
            if x < w {
                return f;
            }
            x -= w;
        }
        unreachable!("weights cover the range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train: 600,
            val: 200,
            test: 400,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub corpus: Corpus,
    pub ruleset: Ruleset,
    /// Rationales for hateful documents, grouped by target.
    pub rationales: Vec<Rationale>,
    pub families: IndexMap<String, Family>,
}

pub fn planted_ruleset() -> Ruleset {
    let rule = |id: &str, src: &str| {
        Rule::parse(id, src, Provenance::Manual).expect("planted rules parse")
    };
    Ruleset::new(vec![
        rule(OVER_GENERAL_RULE, r#"contains("hate")"#),
        rule(LOATHE_RULE, r#"contains("loathe")"#),
        rule(FRAGILE_RULE, r#"contains("are vermin")"#),
    ])
    .expect("planted ids are unique")
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("word lists are non-empty")
}

/// Words of one document and the half-open rationale span of its core phrase.
fn compose<R: Rng>(family: Family, rng: &mut R) -> (Vec<&'static str>, [usize; 2], &'static str) {
    let target = pick(rng, TARGETS);
    let core: Vec<&str> = match family {
        Family::HostileCovered => vec!["i", pick(rng, COVERED_VERBS), target],
        Family::HostileParaphrase => vec!["i", pick(rng, PARAPHRASE_VERBS), target],
        Family::DehumanizingCovered => vec![target, "are", "vermin"],
        Family::DehumanizingParaphrase => vec![target, "are", pick(rng, PARAPHRASE_NOUNS)],
        Family::MundaneComplaint => vec!["i", "hate", pick(rng, MUNDANE)],
        Family::PositiveMention => vec![target, "are", pick(rng, PRAISE)],
        Family::Neutral => {
            if rng.random_bool(0.5) {
                vec!["met", "some", target, "at", "the", pick(rng, PLACES)]
            } else {
                vec!["the", pick(rng, THINGS), "was", pick(rng, MOODS)]
            }
        }
    };
    let mut out = Vec::with_capacity(core.len() + 2);
    if rng.random_bool(0.5) {
        out.push(pick(rng, FILLER));
    }
    let start = out.len();
    out.extend(&core);
    let span = if core[0] == "i" {
        [start + 1, start + 3]
    } else {
        [start, start + core.len()]
    };
    if rng.random_bool(0.5) {
        out.push(pick(rng, FILLER));
    }
    (out, span, target)
}

/// Same config, same bytes.
pub fn make_synthetic(cfg: &SynthConfig) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut docs = Vec::with_capacity(cfg.train + cfg.val + cfg.test);
    let mut rationales = Vec::new();
    let mut families = IndexMap::new();
    for (split, n) in [
        (Split::Train, cfg.train),
        (Split::Val, cfg.val),
        (Split::Test, cfg.test),
    ] {
        for i in 0..n {
            let family = Family::draw(&mut rng);
            let (words, span, target) = compose(family, &mut rng);
            let id = format!("{split}-{i:04}");
            if family.label() == 1 {
                rationales.push(Rationale {
                    doc_id: id.clone(),
                    spans: vec![span],
                    group: target.to_owned(),
                });
            }
            families.insert(id.clone(), family);
            docs.push(Document::new(
                id,
                words.join(" "),
                Some(family.label()),
                split,
            ));
        }
    }
    Synthetic {
        corpus: Corpus::new(docs).expect("generated ids are unique and texts non-empty"),
        ruleset: planted_ruleset(),
        rationales,
        families,
    }
}

/// How badly the planted rules behave on a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub over_general_precision: f64,
    /// Recall of the fragile rule over the dehumanizing families.
    pub fragile_recall: f64,
    /// Macro-F1 of "positive iff any rule fires" over `split`.
    pub rules_only_macro_f1: f64,
}

pub fn synth_report(s: &Synthetic, split: Split) -> SynthReport {
    let over = s.ruleset.get(OVER_GENERAL_RULE).expect("planted");
    let fragile = s.ruleset.get(FRAGILE_RULE).expect("planted");
    let (mut over_fired, mut over_tp, mut dehum, mut dehum_hit) = (0usize, 0usize, 0usize, 0usize);
    let mut pairs = Vec::new();
    for doc in s.corpus.split_docs(split) {
        let view = TextView::new(&doc.text);
        let family = s.families[&doc.id];
        let label = family.label();
        if over.fires(&view) {
            over_fired += 1;
            over_tp += usize::from(label == 1);
        }
        if family.is_dehumanizing() {
            dehum += 1;
            dehum_hit += usize::from(fragile.fires(&view));
        }
        let any = s.ruleset.iter().any(|r| r.fires(&view));
        pairs.push((u8::from(any), label));
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    SynthReport {
        over_general_precision: frac(over_tp, over_fired),
        fragile_recall: frac(dehum_hit, dehum),
        rules_only_macro_f1: metrics(&Confusion::from_pairs(pairs)).macro_f1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::save_corpus;
    use crate::induce::extract_ngrams;

    #[test]
    fn planted_rules_misbehave() {
        let s = make_synthetic(&SynthConfig::default());
        for split in [Split::Train, Split::Val, Split::Test] {
            let r = synth_report(&s, split);
            assert!(r.over_general_precision < 0.8, "{split}: {r:?}");
            assert!(r.fragile_recall < 0.6, "{split}: {r:?}");
            assert!(r.rules_only_macro_f1 <= 0.8, "{split}: {r:?}");
        }
    }

    #[test]
    fn byte_identical_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = |seed, name: &str| {
            let p = dir.path().join(name);
            save_corpus(
                &p,
                &make_synthetic(&SynthConfig {
                    seed,
                    ..Default::default()
                })
                .corpus,
            )
            .unwrap();
            std::fs::read(p).unwrap()
        };
        assert_eq!(bytes(5, "a"), bytes(5, "b"));
        assert_ne!(bytes(5, "c"), bytes(6, "d"));
    }

    #[test]
    fn rationales_point_at_core_phrase() {
        let s = make_synthetic(&SynthConfig {
            train: 50,
            val: 0,
            test: 0,
            ..Default::default()
        });
        assert!(!s.rationales.is_empty());
        for r in &s.rationales {
            let grams = extract_ngrams(r, &s.corpus).unwrap();
            assert!(grams.contains_key(&r.group), "{r:?}");
        }
        let counts = s.corpus.split_counts();
        assert_eq!(counts.train.total, 50);
    }
}
