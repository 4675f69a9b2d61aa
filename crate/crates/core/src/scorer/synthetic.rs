//! Seeded synthetic stand-in for a fine-tuned vision-language model.
//!
//! Each image carries the tokens of its source entity's name and concepts as
//! latents. The logit is a weighted sum of Jaccard overlaps between the query
//! text and those latents, minus a bias, plus Gaussian noise seeded from a
//! stable hash of `(seed, text, image id)`.

use std::collections::{HashMap, HashSet};
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_probability, sigmoid, ScoreRequest, Scorer};
use crate::corpus::Corpus;
use crate::error::ScoreError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticWorldConfig {
    pub seed: u64,
    pub noise_sigma: f64,
    pub name_weight: f64,
    pub concept_weight: f64,
    /// Subtracted from every logit; positive, so zero overlap scores below 0.5.
    pub bias: f64,
    /// Probability that a generated entity borrows concepts from a sibling,
    /// used by the world generator.
    pub distractor_overlap: f64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            noise_sigma: 0.5,
            name_weight: 2.0,
            concept_weight: 6.0,
            bias: 3.0,
            distractor_overlap: 0.5,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        let finite_non_negative = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(ScoreError::Config(format!("{name} must be finite and non-negative, got {v}")))
            }
        };
        finite_non_negative("noise_sigma", self.noise_sigma)?;
        finite_non_negative("name_weight", self.name_weight)?;
        finite_non_negative("concept_weight", self.concept_weight)?;
        if !(self.bias.is_finite() && self.bias > 0.0) {
            return Err(ScoreError::Config(format!("bias must be finite and positive, got {}", self.bias)));
        }
        if !(0.0..=1.0).contains(&self.distractor_overlap) {
            return Err(ScoreError::Config(format!(
                "distractor_overlap must lie in [0, 1], got {}",
                self.distractor_overlap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Latents {
    name: HashSet<String>,
    concepts: HashSet<String>,
}

#[derive(Debug, Clone)]
pub struct SyntheticScorer {
    config: SyntheticWorldConfig,
    latents: HashMap<String, Latents>,
}

/// Lowercased alphanumeric tokens.
pub(crate) fn tokenize(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn make_synthetic_scorer(corpus: &Corpus, config: SyntheticWorldConfig) -> Result<SyntheticScorer, ScoreError> {
    config.validate()?;
    let mut latents = HashMap::with_capacity(corpus.images().len());
    for image in corpus.images() {
        let source = image
            .source_entity_id
            .as_deref()
            .ok_or_else(|| ScoreError::MissingProvenance(image.id.clone()))?;
        let entity = corpus
            .entity(source)
            .ok_or_else(|| ScoreError::MissingProvenance(image.id.clone()))?;
        latents.insert(
            image.id.clone(),
            Latents {
                name: tokenize(&entity.name),
                concepts: entity.concepts.iter().flat_map(|c| tokenize(c)).collect(),
            },
        );
    }
    Ok(SyntheticScorer { config, latents })
}

impl SyntheticScorer {
    pub fn config(&self) -> &SyntheticWorldConfig {
        &self.config
    }

    fn noise(&self, text: &str, image_id: &str) -> f64 {
        if self.config.noise_sigma == 0.0 {
            return 0.0;
        }
        let mut hasher = FnvHasher::default();
        hasher.write_u64(self.config.seed);
        hasher.write(text.as_bytes());
        hasher.write_u8(0xff);
        hasher.write(image_id.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(hasher.finish());
        let z: f64 = StandardNormal.sample(&mut rng);
        z * self.config.noise_sigma
    }

    pub fn logit(&self, request: &ScoreRequest) -> Result<f64, ScoreError> {
        let latents = self
            .latents
            .get(&request.image.id)
            .ok_or_else(|| ScoreError::UnknownImage(request.image.id.clone()))?;
        let tokens = tokenize(&request.text);
        Ok(self.config.name_weight * jaccard(&tokens, &latents.name)
            + self.config.concept_weight * jaccard(&tokens, &latents.concepts)
            - self.config.bias
            + self.noise(&request.text, &request.image.id))
    }
}

impl Scorer for SyntheticScorer {
    fn score(&self, request: &ScoreRequest) -> Result<f64, ScoreError> {
        if request.text.trim().is_empty() {
            return Err(ScoreError::EmptyText);
        }
        check_probability(0, sigmoid(self.logit(request)?))
    }
}
