//! Ranking and classification evaluation.
//!
//! Ranking instances pair one entity with its true image and 49 sampled
//! images of other entities. Classification sets add one swapped-image
//! negative per positive. Metrics are kept in `[0, 1]` internally and only
//! percent-scaled when a report is serialized.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{compute_concept_stats, split_dataset, ConceptStrategy, Corpus, EntityRecord, ImageRef, PairRecord};
use crate::error::{EvalError, FusionError};
use crate::fusion::{ground_pair, rank_candidates, GroundingConfig, GroundingVerdict, Stages};
use crate::scorer::Scorer;

pub const CANDIDATES_PER_INSTANCE: usize = 50;
pub const HIT_CUTOFFS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingInstance {
    pub entity_id: String,
    pub candidates: Vec<String>,
    pub positive_id: String,
}

/// Images that may serve as negatives for `entity_id`: a different source
/// entity, or, without provenance, not a known positive for the entity.
struct NegativePool<'a> {
    corpus: &'a Corpus,
    known_positives: HashMap<&'a str, HashSet<&'a str>>,
}

impl<'a> NegativePool<'a> {
    fn new(corpus: &'a Corpus, extra_positives: &'a [PairRecord]) -> Self {
        let mut known_positives: HashMap<&str, HashSet<&str>> = HashMap::new();
        for pair in corpus.pairs().iter().chain(extra_positives).filter(|p| p.label) {
            known_positives
                .entry(pair.entity_id.as_str())
                .or_default()
                .insert(pair.image_id.as_str());
        }
        Self { corpus, known_positives }
    }

    fn eligible(&self, entity_id: &str, positive_image: &str) -> Vec<&'a ImageRef> {
        let positives = self.known_positives.get(entity_id);
        self.corpus
            .images()
            .iter()
            .filter(|image| image.id != positive_image)
            .filter(|image| match &image.source_entity_id {
                Some(source) => source != entity_id,
                None => !positives.is_some_and(|set| set.contains(image.id.as_str())),
            })
            .collect()
    }
}

/// One 50-candidate instance per positive pair, negatives drawn without
/// replacement. Deterministic under `seed`.
pub fn build_ranking_instances(corpus: &Corpus, positives: &[PairRecord], seed: u64) -> Result<Vec<RankingInstance>, EvalError> {
    if corpus.images().len() < CANDIDATES_PER_INSTANCE {
        return Err(EvalError::InsufficientNegatives(format!(
            "ranking needs at least {CANDIDATES_PER_INSTANCE} images, corpus has {}",
            corpus.images().len()
        )));
    }
    let pool = NegativePool::new(corpus, positives);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positives
        .iter()
        .map(|pair| {
            let eligible = pool.eligible(&pair.entity_id, &pair.image_id);
            if eligible.len() < CANDIDATES_PER_INSTANCE - 1 {
                return Err(EvalError::InsufficientNegatives(format!(
                    "entity {:?} has only {} eligible negatives",
                    pair.entity_id,
                    eligible.len()
                )));
            }
            let mut candidates: Vec<String> = eligible
                .choose_multiple(&mut rng, CANDIDATES_PER_INSTANCE - 1)
                .map(|image| image.id.clone())
                .collect();
            candidates.push(pair.image_id.clone());
            candidates.shuffle(&mut rng);
            Ok(RankingInstance {
                entity_id: pair.entity_id.clone(),
                candidates,
                positive_id: pair.image_id.clone(),
            })
        })
        .collect()
}

/// Positives followed by one swapped-image negative per positive.
pub fn build_classification_set(positives: &[PairRecord], corpus: &Corpus, seed: u64) -> Result<Vec<PairRecord>, EvalError> {
    let pool = NegativePool::new(corpus, positives);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<PairRecord> = positives.iter().map(|p| PairRecord::new(&p.entity_id, &p.image_id, true)).collect();
    for pair in positives {
        let eligible = pool.eligible(&pair.entity_id, &pair.image_id);
        let image = eligible.choose(&mut rng).ok_or_else(|| {
            EvalError::InsufficientNegatives(format!("no image of another entity is available for {:?}", pair.entity_id))
        })?;
        out.push(PairRecord::new(&pair.entity_id, &image.id, false));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub mr: f64,
    pub mrr: f64,
    pub hit_at: BTreeMap<usize, f64>,
    pub instances: usize,
}

/// Metrics from 1-based ranks of the positive candidate.
pub fn ranking_metrics_from_ranks(ranks: &[usize]) -> Result<RankingMetrics, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::Empty("ranking instance"));
    }
    let n = ranks.len() as f64;
    let mr = ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let hit_at = HIT_CUTOFFS
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    Ok(RankingMetrics {
        mr,
        mrr,
        hit_at,
        instances: ranks.len(),
    })
}

/// 1-based position of the instance's positive in `ordering`.
pub fn rank_of_positive(instance: &RankingInstance, ordering: &[String]) -> Result<usize, EvalError> {
    let missing = || EvalError::PositiveMissing {
        entity: instance.entity_id.clone(),
        positive: instance.positive_id.clone(),
    };
    if ordering.len() != instance.candidates.len() {
        return Err(missing());
    }
    ordering
        .iter()
        .position(|id| *id == instance.positive_id)
        .map(|i| i + 1)
        .ok_or_else(missing)
}

/// Runs `ranker` on every instance and aggregates in instance order.
pub fn ranking_metrics<F>(instances: &[RankingInstance], ranker: F) -> Result<RankingMetrics, EvalError>
where
    F: Fn(&RankingInstance) -> Result<Vec<String>, EvalError> + Sync,
{
    let ranks = instances
        .par_iter()
        .map(|instance| rank_of_positive(instance, &ranker(instance)?))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    ranking_metrics_from_ranks(&ranks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Confusion-matrix metrics over `(predicted, actual)` pairs. Precision,
/// recall and F1 are zero when their denominators are.
pub fn classification_metrics(verdicts: &[(bool, bool)]) -> Result<ClassificationMetrics, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::Empty("verdict"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for &(predicted, actual) in verdicts {
        match (predicted, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassificationMetrics {
        accuracy: ratio(tp + tn, verdicts.len()),
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
        tn,
    })
}

/// Which split of the positive pairs an experiment evaluates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Validation,
    Test,
    /// Every positive pair; for corpora that were never trained on.
    All,
}

impl std::str::FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "validation" | "val" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            other => Err(format!("unknown split {other:?} (expected validation, test or all)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grounding: GroundingConfig,
    pub seed: u64,
    pub split: EvalSplit,
    pub ranking: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grounding: GroundingConfig::default(),
            seed: 42,
            split: EvalSplit::Test,
            ranking: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: ConceptStrategy,
    pub stages: Stages,
    pub seed: u64,
    pub ranking: Option<RankingMetrics>,
    pub classification: Option<ClassificationMetrics>,
}

/// One classified pair of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledVerdict {
    #[serde(flatten)]
    pub verdict: GroundingVerdict,
    pub actual: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub report: EvalReport,
    pub verdicts: Vec<LabeledVerdict>,
}

/// Entities referenced by `pairs`, de-duplicated, in first-seen order.
fn entities_of<'a>(corpus: &'a Corpus, pairs: &[PairRecord]) -> Result<Vec<&'a EntityRecord>, EvalError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for pair in pairs {
        if seen.insert(pair.entity_id.as_str()) {
            out.push(corpus.entity(&pair.entity_id).ok_or_else(|| {
                EvalError::Corpus(crate::error::CorpusError::Invalid(format!("unknown entity {:?}", pair.entity_id)))
            })?);
        }
    }
    Ok(out)
}

fn lookup<'a>(corpus: &'a Corpus, pair: &PairRecord) -> Result<(&'a EntityRecord, &'a ImageRef), EvalError> {
    let invalid = |what: &str, id: &str| EvalError::Corpus(crate::error::CorpusError::Invalid(format!("unknown {what} {id:?}")));
    let entity = corpus.entity(&pair.entity_id).ok_or_else(|| invalid("entity", &pair.entity_id))?;
    let image = corpus.image(&pair.image_id).ok_or_else(|| invalid("image", &pair.image_id))?;
    Ok((entity, image))
}

/// Grounds every pair of a classification set, in input order.
pub fn classify_pairs(
    corpus: &Corpus,
    pairs: &[PairRecord],
    scorer: &dyn Scorer,
    config: &GroundingConfig,
) -> Result<Vec<LabeledVerdict>, EvalError> {
    let stats = compute_concept_stats(entities_of(corpus, pairs)?)?;
    pairs
        .par_iter()
        .map(|pair| {
            let (entity, image) = lookup(corpus, pair)?;
            let verdict = ground_pair(entity, image, scorer, &stats, config)?;
            Ok(LabeledVerdict {
                verdict,
                actual: pair.label,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Full protocol: split, build the classification set and ranking
/// instances from the evaluation positives, run the pipeline, aggregate.
pub fn run_experiment(corpus: &Corpus, scorer: &dyn Scorer, config: &ExperimentConfig) -> Result<Experiment, EvalError> {
    config.grounding.validate()?;
    let positives = corpus.positive_pairs();
    if positives.is_empty() {
        return Err(EvalError::Empty("positive pair"));
    }
    let split = split_dataset(&positives, config.seed);
    let eval_positives = match config.split {
        EvalSplit::Validation => split.validation,
        EvalSplit::Test => split.test,
        EvalSplit::All => positives,
    };
    if eval_positives.is_empty() {
        return Err(EvalError::Empty("evaluation pair"));
    }

    let pairs = build_classification_set(&eval_positives, corpus, config.seed)?;
    let verdicts = classify_pairs(corpus, &pairs, scorer, &config.grounding)?;
    let outcomes: Vec<(bool, bool)> = verdicts.iter().map(|v| (v.verdict.final_label, v.actual)).collect();
    let classification = classification_metrics(&outcomes)?;

    let ranking = if config.ranking {
        let instances = build_ranking_instances(corpus, &eval_positives, config.seed)?;
        Some(ranking_metrics(&instances, |instance| {
            let entity = corpus.entity(&instance.entity_id).ok_or_else(|| {
                EvalError::Corpus(crate::error::CorpusError::Invalid(format!("unknown entity {:?}", instance.entity_id)))
            })?;
            let candidates = instance
                .candidates
                .iter()
                .map(|id| {
                    corpus
                        .image(id)
                        .cloned()
                        .ok_or_else(|| EvalError::Corpus(crate::error::CorpusError::Invalid(format!("unknown image {id:?}"))))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let ranked = rank_candidates(entity, &candidates, scorer, config.grounding.strategy).map_err(EvalError::from)?;
            Ok(ranked.into_iter().map(|r| r.image.id).collect())
        })?)
    } else {
        None
    };

    Ok(Experiment {
        report: EvalReport {
            strategy: config.grounding.strategy,
            stages: config.grounding.stages,
            seed: config.seed,
            ranking,
            classification: Some(classification),
        },
        verdicts,
    })
}

impl From<crate::error::ScoreError> for EvalError {
    fn from(e: crate::error::ScoreError) -> Self {
        EvalError::Fusion(FusionError::Score(e))
    }
}

/// Rounds `x·100` to two decimals, ties to even.
pub fn percent(x: f64) -> f64 {
    (x * 10_000.0).round_ties_even() / 100.0
}

/// Serialized view of a report with percent-scaled metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentReport {
    pub strategy: ConceptStrategy,
    pub stages: Stages,
    pub seed: u64,
    pub rounding: String,
    pub ranking: Option<PercentRanking>,
    pub classification: Option<PercentClassification>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentRanking {
    pub mr: f64,
    pub mrr: f64,
    pub hit_at_1: f64,
    pub hit_at_5: f64,
    pub hit_at_10: f64,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentClassification {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl EvalReport {
    pub fn to_percent(&self) -> PercentReport {
        PercentReport {
            strategy: self.strategy,
            stages: self.stages,
            seed: self.seed,
            rounding: "percent, 2 decimals, half-to-even; mr unscaled".into(),
            ranking: self.ranking.as_ref().map(|r| {
                let hit = |k| percent(r.hit_at.get(&k).copied().unwrap_or(0.0));
                PercentRanking {
                    mr: (r.mr * 100.0).round_ties_even() / 100.0,
                    mrr: percent(r.mrr),
                    hit_at_1: hit(1),
                    hit_at_5: hit(5),
                    hit_at_10: hit(10),
                    instances: r.instances,
                }
            }),
            classification: self.classification.as_ref().map(|c| PercentClassification {
                accuracy: percent(c.accuracy),
                precision: percent(c.precision),
                recall: percent(c.recall),
                f1: percent(c.f1),
                tp: c.tp,
                fp: c.fp,
                fn_: c.fn_,
                tn: c.tn,
            }),
        }
    }

    /// Rows `label,MR,MRR,Hit@1,Hit@5,Hit@10,Accuracy,Precision,Recall,F1`.
    pub fn csv_header() -> &'static str {
        "model,mr,mrr,hit@1,hit@5,hit@10,accuracy,precision,recall,f1"
    }

    pub fn csv_row(&self, label: &str) -> String {
        let p = self.to_percent();
        let mut cells = vec![label.to_string()];
        match &p.ranking {
            Some(r) => cells.extend([r.mr, r.mrr, r.hit_at_1, r.hit_at_5, r.hit_at_10].map(|v| format!("{v:.2}"))),
            None => cells.extend(std::iter::repeat_n(String::new(), 5)),
        }
        match &p.classification {
            Some(c) => cells.extend([c.accuracy, c.precision, c.recall, c.f1].map(|v| format!("{v:.2}"))),
            None => cells.extend(std::iter::repeat_n(String::new(), 4)),
        }
        cells.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_ranks() {
        let m = ranking_metrics_from_ranks(&[1, 2, 4]).unwrap();
        assert!((m.mr - 7.0 / 3.0).abs() < 1e-15);
        assert!((m.mrr - 0.583_333_333_333_333_4).abs() < 1e-15);
        assert!((m.hit_at[&1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.hit_at[&5], 1.0);

        let perfect = ranking_metrics_from_ranks(&[1, 1]).unwrap();
        assert_eq!((perfect.mr, perfect.mrr, perfect.hit_at[&10]), (1.0, 1.0, 1.0));

        let worst = ranking_metrics_from_ranks(&[50]).unwrap();
        assert_eq!(worst.hit_at[&10], 0.0);
        assert!(ranking_metrics_from_ranks(&[]).is_err());
    }

    #[test]
    fn confusion_hand_case() {
        let mut v = vec![(true, true); 2];
        v.push((true, false));
        v.push((false, true));
        v.extend([(false, false); 2]);
        let m = classification_metrics(&v).unwrap();
        assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-15);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn predict_all_true_on_balanced_set() {
        let v = [(true, true), (true, false), (true, true), (true, false)];
        let m = classification_metrics(&v).unwrap();
        assert_eq!((m.recall, m.accuracy, m.precision), (1.0, 0.5, 0.5));
    }

    #[test]
    fn no_positive_predictions() {
        let m = classification_metrics(&[(false, true), (false, false)]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(classification_metrics(&[]).is_err());
    }

    #[test]
    fn percent_rounds_half_to_even() {
        assert_eq!(percent(0.58333333), 58.33);
        assert_eq!(percent(0.5), 50.0);
        assert_eq!(percent(0.123_45), 12.34);
        assert_eq!(percent(0.123_75), 12.38);
    }

    #[test]
    fn missing_positive_is_an_error() {
        let instance = RankingInstance {
            entity_id: "e".into(),
            candidates: vec!["a".into(), "b".into()],
            positive_id: "b".into(),
        };
        assert_eq!(rank_of_positive(&instance, &["b".into(), "a".into()]).unwrap(), 1);
        assert!(matches!(
            rank_of_positive(&instance, &["a".into()]),
            Err(EvalError::PositiveMissing { .. })
        ));
    }
}
