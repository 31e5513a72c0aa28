//! Regenerates the shipped toy corpus: a three-class review dataset and the
//! synonym table its attacks draw candidates from.
//!
//! Every content word belongs to a synonym group whose first member is
//! frequent and whose other members are rare, so a vanilla model sees the
//! rare members only a handful of times.
//!
//!     cargo run --example toy_corpus -- crates/core/data

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use attribution_robustness::data::write_jsonl_dataset;

const POSITIVE: &[&[&str]] = &[
    &["good", "fine", "nice", "solid"],
    &["great", "excellent", "superb", "terrific"],
    &["enjoyable", "pleasant", "delightful", "charming"],
];
const NEGATIVE: &[&[&str]] = &[
    &["bad", "poor", "weak", "lousy"],
    &["awful", "terrible", "horrible", "dreadful"],
    &["boring", "dull", "tedious", "bland"],
];
const NEUTRAL: &[&[&str]] = &[
    &["average", "ordinary", "typical", "standard"],
    &["okay", "decent", "acceptable", "passable"],
    &["uneven", "mixed", "moderate", "middling"],
];
const NOUNS: &[&[&str]] = &[
    &["movie", "film", "picture", "feature"],
    &["plot", "story", "storyline", "narrative"],
    &["acting", "performance", "portrayal", "casting"],
    &["music", "score", "soundtrack", "songs"],
    &["ending", "finale", "conclusion", "climax"],
];
const ADVERBS: &[&[&str]] = &[&["really", "truly", "genuinely", "honestly"], &["quite", "rather", "fairly", "pretty"]];
const VERBS: &[&[&str]] = &[&["thought", "felt", "found", "considered"], &["seemed", "appeared", "looked", "felt"]];

/// Frequent first member, rare others.
const WEIGHTS: [u32; 4] = [12, 2, 1, 1];

struct Gen {
    rng: ChaCha8Rng,
    weights: WeightedIndex<u32>,
}

impl Gen {
    fn word(&mut self, groups: &[&[&'static str]]) -> &'static str {
        let g = groups[self.rng.gen_range(0..groups.len())];
        g[self.weights.sample(&mut self.rng)]
    }

    fn sentence(&mut self, adjectives: &[&[&'static str]]) -> String {
        let (n1, n2) = (self.word(NOUNS), self.word(NOUNS));
        let (a1, a2) = (self.word(adjectives), self.word(adjectives));
        let adv = self.word(ADVERBS);
        let (think, seem) = (self.word(&VERBS[..1]), self.word(&VERBS[1..]));
        match self.rng.gen_range(0..5) {
            0 => format!("the {n1} was {adv} {a1} and the {n2} was {a2}"),
            1 => format!("i {think} the {n1} {adv} {a1} and the {n2} {a2} too"),
            2 => format!("a {adv} {a1} {n1} with {a2} {n2} overall"),
            3 => format!("the {n1} {seem} {a1} while the {n2} was {adv} {a2}"),
            _ => format!("overall this {n1} is {a1} and its {n2} is {adv} {a2}"),
        }
    }
}

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/core/data".into()));
    let mut gen = Gen {
        rng: ChaCha8Rng::seed_from_u64(2024),
        weights: WeightedIndex::new(WEIGHTS).expect("positive weights"),
    };
    let classes: [(&str, &[&[&str]]); 3] = [("positive", POSITIVE), ("negative", NEGATIVE), ("neutral", NEUTRAL)];
    let mut rows = Vec::new();
    for i in 0..360 {
        let (label, adjectives) = classes[i % 3];
        rows.push((gen.sentence(adjectives), vec![label.to_string()]));
    }
    rows.shuffle(&mut gen.rng);
    write_jsonl_dataset(&out.join("toy_sentiment.jsonl"), &rows).expect("write dataset");

    let mut table = String::new();
    let all = [POSITIVE, NEGATIVE, NEUTRAL, NOUNS, ADVERBS, VERBS];
    let mut entries: Vec<(&str, Vec<&str>)> = Vec::new();
    for groups in all {
        for g in groups {
            for w in g.iter() {
                let others: Vec<&str> = g.iter().copied().filter(|o| o != w).collect();
                match entries.iter_mut().find(|(e, _)| e == w) {
                    Some((_, syn)) => {
                        for o in others {
                            if !syn.contains(&o) {
                                syn.push(o);
                            }
                        }
                    }
                    None => entries.push((w, others)),
                }
            }
        }
    }
    entries.sort();
    for (w, syn) in entries {
        let _ = writeln!(table, "{w}\t{}", syn.join(","));
    }
    std::fs::write(out.join("toy_synonyms.tsv"), table).expect("write synonyms");
    println!("wrote {} samples to {}", rows.len(), out.display());
}
