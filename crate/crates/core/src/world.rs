//! Seeded synthetic corpus for desk-scale experiments.
//!
//! Entities get pseudo-word names, power-law popularity and 2 to 6 concepts
//! drawn from a small taxonomy of single-word basic-level categories and
//! multi-word fine-grained ones. Some entities borrow part of a sibling's
//! concept list so that negatives share concepts with positives.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, EntityRecord, ImageRef, PairRecord};
use crate::error::CorpusError;
use crate::scorer::SyntheticWorldConfig;

struct Domain {
    root: &'static str,
    basic: &'static [&'static str],
    modifiers: &'static [&'static str],
}

const DOMAINS: &[Domain] = &[
    Domain {
        root: "person",
        basic: &["singer", "actor", "writer", "politician", "athlete", "painter", "scientist", "musician", "director"],
        modifiers: &["english", "french", "chinese", "jazz", "film", "folk", "ancient", "modern", "olympic"],
    },
    Domain {
        root: "animal",
        basic: &["mammal", "antelope", "bird", "reptile", "fish", "insect", "rodent", "primate"],
        modifiers: &["african", "arctic", "desert", "marine", "nocturnal", "endangered", "tropical"],
    },
    Domain {
        root: "place",
        basic: &["city", "village", "river", "mountain", "island", "lake", "province", "valley"],
        modifiers: &["coastal", "alpine", "historic", "northern", "southern", "volcanic", "border"],
    },
    Domain {
        root: "plant",
        basic: &["tree", "flower", "shrub", "herb", "fern", "grass", "vine"],
        modifiers: &["medicinal", "flowering", "evergreen", "aquatic", "climbing", "ornamental"],
    },
    Domain {
        root: "artifact",
        basic: &["vehicle", "weapon", "instrument", "vessel", "tool", "building", "bridge"],
        modifiers: &["bronze", "wooden", "medieval", "steam", "military", "ceremonial"],
    },
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "to", "ven", "zu", "pel", "dor", "shi", "qua", "len", "bri", "sto", "mar", "gan", "fe", "ul",
    "tho", "nix", "ari", "bel", "cor", "dun", "eth", "fal", "gor", "hal", "iz", "jor",
];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    let mut word: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
    if let Some(first) = word.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    word
}

fn unique_name(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let tokens = rng.gen_range(1..=3);
        let name = (0..tokens).map(|_| pseudo_word(rng)).collect::<Vec<_>>().join(" ");
        if used.insert(name.clone()) {
            return name;
        }
    }
}

/// Power-law popularity: most entities land in the long tail.
fn viewtimes(rng: &mut ChaCha8Rng) -> u64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    (50.0 * u.powf(-1.0 / 0.6)).min(1e9) as u64
}

fn fresh_concepts(rng: &mut ChaCha8Rng, domain: &Domain, count: usize) -> Vec<String> {
    let mut concepts = vec![domain.root.to_string()];
    let mut basics: Vec<&str> = domain.basic.to_vec();
    basics.shuffle(rng);
    let mut basics = basics.into_iter();
    while concepts.len() < count {
        let basic = basics.next().unwrap_or(domain.basic[0]);
        let concept = if rng.gen_bool(0.5) {
            basic.to_string()
        } else {
            format!("{} {basic}", domain.modifiers.choose(rng).expect("non-empty"))
        };
        if !concepts.contains(&concept) {
            concepts.push(concept);
        }
    }
    concepts
}

/// Builds a corpus of `entity_count` entities, one image and one positive pair
/// each. Deterministic in `config.seed` and `config.distractor_overlap`.
pub fn generate_world(entity_count: usize, config: &SyntheticWorldConfig) -> Result<Corpus, CorpusError> {
    config.validate().map_err(|e| CorpusError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut used_names = HashSet::new();
    let mut entities: Vec<EntityRecord> = Vec::with_capacity(entity_count);
    let mut by_domain: Vec<Vec<usize>> = vec![Vec::new(); DOMAINS.len()];

    for i in 0..entity_count {
        let d = rng.gen_range(0..DOMAINS.len());
        let domain = &DOMAINS[d];
        let count: usize = rng.gen_range(2..=6);
        let mut concepts = match by_domain[d].choose(&mut rng) {
            Some(&sibling) if rng.gen_bool(config.distractor_overlap) => {
                let mut borrowed = entities[sibling].concepts.clone();
                borrowed.shuffle(&mut rng);
                borrowed.truncate(count.div_ceil(2));
                borrowed
            }
            _ => Vec::new(),
        };
        for c in fresh_concepts(&mut rng, domain, count) {
            if concepts.len() >= count {
                break;
            }
            if !concepts.contains(&c) {
                concepts.push(c);
            }
        }
        let name = unique_name(&mut rng, &mut used_names);
        entities.push(EntityRecord::new(format!("e{i:05}"), name, viewtimes(&mut rng), concepts));
        by_domain[d].push(i);
    }

    let images = (0..entity_count)
        .map(|i| ImageRef::new(format!("img{i:05}"), format!("synthetic://images/{i:05}.jpg"), Some(format!("e{i:05}"))))
        .collect();
    let pairs = (0..entity_count)
        .map(|i| PairRecord::new(format!("e{i:05}"), format!("img{i:05}"), true))
        .collect();
    Corpus::from_parts(entities, images, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let config = SyntheticWorldConfig::default();
        let a = generate_world(300, &config).unwrap();
        let b = generate_world(300, &config).unwrap();
        assert_eq!(a.entities(), b.entities());
        assert_eq!(a.images().len(), 300);
        for e in a.entities() {
            assert!((2..=6).contains(&e.concepts.len()), "{e:?}");
        }
        let long_tail = a.entities().iter().filter(|e| e.viewtimes < 100_000).count();
        assert!(long_tail > 250, "{long_tail}");
    }
}
