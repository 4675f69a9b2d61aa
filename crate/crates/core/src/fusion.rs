//! Two-stage concept-guided grounding.
//!
//! Stage 1 (concept integration) scores the entity name concatenated with its
//! selected concepts against the image and thresholds the prediction. Pairs
//! rejected there are re-judged by stage 2 (evidence fusion): every concept is
//! scored on its own, weighted by how specific it is across the evaluation
//! corpus, and the weighted mean is thresholded again.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{select_concepts, ConceptStats, ConceptStrategy, EntityRecord, ImageRef};
use crate::error::FusionError;
use crate::scorer::{ScoreRequest, Scorer};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_LOG_BASE: u32 = 10;

/// Which stages of the pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stages {
    #[serde(rename = "1")]
    ConceptIntegration,
    #[serde(rename = "1+2")]
    WithEvidenceFusion,
}

impl std::str::FromStr for Stages {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Self::ConceptIntegration),
            "1+2" | "12" => Ok(Self::WithEvidenceFusion),
            other => Err(format!("unknown stage selection {other:?} (expected 1 or 1+2)")),
        }
    }
}

impl std::fmt::Display for Stages {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ConceptIntegration => "1",
            Self::WithEvidenceFusion => "1+2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingConfig {
    pub strategy: ConceptStrategy,
    pub stages: Stages,
    pub stage1_threshold: f64,
    pub stage2_threshold: f64,
    pub log_base: u32,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            strategy: ConceptStrategy::All,
            stages: Stages::WithEvidenceFusion,
            stage1_threshold: DEFAULT_THRESHOLD,
            stage2_threshold: DEFAULT_THRESHOLD,
            log_base: DEFAULT_LOG_BASE,
        }
    }
}

impl GroundingConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        check_threshold(self.stage1_threshold)?;
        check_threshold(self.stage2_threshold)?;
        if self.log_base < 2 {
            return Err(FusionError::Domain {
                num: 0,
                ents: 0,
                log_base: self.log_base,
            });
        }
        Ok(())
    }
}

fn check_threshold(threshold: f64) -> Result<(), FusionError> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(FusionError::Threshold(threshold))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub concept: String,
    pub p_e: f64,
    pub contribution: f64,
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingVerdict {
    pub entity_id: String,
    pub image_id: String,
    pub stage1_prediction: f64,
    pub stage1_accept: bool,
    #[serde(default)]
    pub evidence: Vec<EvidenceItem>,
    #[serde(default)]
    pub p_h: Option<f64>,
    #[serde(default)]
    pub stage2_accept: Option<bool>,
    pub final_label: bool,
}

impl GroundingVerdict {
    /// Checks the structural invariants tying the stage fields together.
    pub fn is_consistent(&self) -> bool {
        let stage2_ran = self.p_h.is_some();
        if stage2_ran != self.stage2_accept.is_some() || (stage2_ran && self.stage1_accept) {
            return false;
        }
        if !stage2_ran && !self.evidence.is_empty() {
            return false;
        }
        self.final_label == (self.stage1_accept || self.stage2_accept == Some(true))
    }
}

/// `"name, concept1, concept2"`.
pub fn concat_text(entity_name: &str, concepts: &[String]) -> Result<String, FusionError> {
    if entity_name.trim().is_empty() {
        return Err(FusionError::EmptyName);
    }
    let mut text = entity_name.to_string();
    for concept in concepts {
        text.push_str(", ");
        text.push_str(concept);
    }
    Ok(text)
}

fn stage1_request(entity: &EntityRecord, image: &ImageRef, strategy: ConceptStrategy) -> Result<ScoreRequest, FusionError> {
    let text = concat_text(&entity.name, &select_concepts(entity, strategy))?;
    Ok(ScoreRequest::new(text, image.clone())?)
}

/// Concept integration. Accepts when the prediction reaches the threshold.
pub fn stage1(
    entity: &EntityRecord,
    image: &ImageRef,
    scorer: &dyn Scorer,
    strategy: ConceptStrategy,
    threshold: f64,
) -> Result<(f64, bool), FusionError> {
    check_threshold(threshold)?;
    let prediction = scorer.score(&stage1_request(entity, image, strategy)?)?;
    Ok((prediction, prediction >= threshold))
}

/// Weight of a concept carried by `num` of `ents` entities.
///
/// Concepts shared by fewer than `log_base` entities get full weight; beyond
/// that the weight decays as `1/log(num)`, rescaled so that a concept carried
/// by every entity approaches zero.
pub fn contribution(num: u64, ents: u64, log_base: u32) -> Result<f64, FusionError> {
    if num == 0 || num > ents || ents < 2 || log_base < 2 {
        return Err(FusionError::Domain { num, ents, log_base });
    }
    if num < u64::from(log_base) {
        return Ok(1.0);
    }
    let log = if log_base == 10 {
        (num as f64).log10()
    } else {
        (num as f64).ln() / f64::from(log_base).ln()
    };
    let inv_ents = 1.0 / ents as f64;
    Ok((1.0 / log - inv_ents) / (1.0 - inv_ents))
}

/// Mean of `p_e · contribution` over the terms, summed in order.
pub fn fuse_evidence(terms: &[(f64, f64)]) -> Result<f64, FusionError> {
    if terms.is_empty() {
        return Err(FusionError::NoConcepts);
    }
    let sum: f64 = terms.iter().map(|(p_e, con)| p_e * con).sum();
    Ok(sum / terms.len() as f64)
}

/// Evidence fusion over the selected concepts. Returns the evidence items,
/// `P(H)` and the accept decision.
pub fn evidence_fusion(
    entity: &EntityRecord,
    image: &ImageRef,
    scorer: &dyn Scorer,
    stats: &ConceptStats,
    strategy: ConceptStrategy,
    threshold: f64,
    log_base: u32,
) -> Result<(Vec<EvidenceItem>, f64, bool), FusionError> {
    check_threshold(threshold)?;
    let concepts = select_concepts(entity, strategy);
    if concepts.is_empty() {
        return Err(FusionError::NoConcepts);
    }
    let contributions = concepts
        .iter()
        .map(|c| {
            let num = stats.count(c).ok_or_else(|| FusionError::UnknownConcept(c.clone()))?;
            contribution(num, stats.ents(), log_base)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let requests = concepts
        .iter()
        .map(|c| ScoreRequest::new(c.clone(), image.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let predictions = scorer.score_batch(&requests)?;

    let evidence: Vec<EvidenceItem> = concepts
        .into_iter()
        .zip(predictions)
        .zip(contributions)
        .map(|((concept, p_e), contribution)| EvidenceItem {
            concept,
            p_e,
            contribution,
            weighted: p_e * contribution,
        })
        .collect();
    let terms: Vec<(f64, f64)> = evidence.iter().map(|e| (e.p_e, e.contribution)).collect();
    let p_h = fuse_evidence(&terms)?;
    Ok((evidence, p_h, p_h >= threshold))
}

/// Runs stage 1 and, for rejected pairs with concepts, stage 2.
pub fn ground_pair(
    entity: &EntityRecord,
    image: &ImageRef,
    scorer: &dyn Scorer,
    stats: &ConceptStats,
    config: &GroundingConfig,
) -> Result<GroundingVerdict, FusionError> {
    config.validate()?;
    let (stage1_prediction, stage1_accept) = stage1(entity, image, scorer, config.strategy, config.stage1_threshold)?;
    let mut verdict = GroundingVerdict {
        entity_id: entity.id.clone(),
        image_id: image.id.clone(),
        stage1_prediction,
        stage1_accept,
        evidence: Vec::new(),
        p_h: None,
        stage2_accept: None,
        final_label: stage1_accept,
    };
    let run_stage2 = !stage1_accept
        && config.stages == Stages::WithEvidenceFusion
        && !select_concepts(entity, config.strategy).is_empty();
    if run_stage2 {
        let (evidence, p_h, accept) = evidence_fusion(
            entity,
            image,
            scorer,
            stats,
            config.strategy,
            config.stage2_threshold,
            config.log_base,
        )?;
        verdict.evidence = evidence;
        verdict.p_h = Some(p_h);
        verdict.stage2_accept = Some(accept);
        verdict.final_label = accept;
    }
    Ok(verdict)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub image: ImageRef,
    pub prediction: f64,
}

/// Orders `a` before `b` when it scores higher; equal scores fall back to
/// ascending image id.
pub fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Scores each candidate with the stage-1 text and sorts best first.
pub fn rank_candidates(
    entity: &EntityRecord,
    candidates: &[ImageRef],
    scorer: &dyn Scorer,
    strategy: ConceptStrategy,
) -> Result<Vec<RankedCandidate>, FusionError> {
    if candidates.is_empty() {
        return Err(FusionError::NoCandidates);
    }
    let requests = candidates
        .iter()
        .map(|image| stage1_request(entity, image, strategy))
        .collect::<Result<Vec<_>, _>>()?;
    let predictions = scorer.score_batch(&requests)?;
    let mut ranked: Vec<RankedCandidate> = candidates
        .iter()
        .cloned()
        .zip(predictions)
        .map(|(image, prediction)| RankedCandidate { image, prediction })
        .collect();
    ranked.sort_by(|a, b| rank_order((&a.image.id, a.prediction), (&b.image.id, b.prediction)));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::compute_concept_stats;
    use crate::error::ScoreError;
    use std::collections::HashMap;

    /// Looks predictions up by exact text, falling back to a default.
    struct Table {
        by_text: HashMap<String, f64>,
        by_image: HashMap<String, f64>,
        default: f64,
    }

    impl Table {
        fn new(default: f64) -> Self {
            Self {
                by_text: HashMap::new(),
                by_image: HashMap::new(),
                default,
            }
        }

        fn text(mut self, text: &str, p: f64) -> Self {
            self.by_text.insert(text.into(), p);
            self
        }

        fn image(mut self, id: &str, p: f64) -> Self {
            self.by_image.insert(id.into(), p);
            self
        }
    }

    impl Scorer for Table {
        fn score(&self, r: &ScoreRequest) -> Result<f64, ScoreError> {
            Ok(*self
                .by_text
                .get(&r.text)
                .or_else(|| self.by_image.get(&r.image.id))
                .unwrap_or(&self.default))
        }
    }

    fn entity(concepts: &[&str]) -> EntityRecord {
        EntityRecord::new("e", "Jay Chou", 0, concepts.iter().map(|c| c.to_string()).collect())
    }

    fn image(id: &str) -> ImageRef {
        ImageRef::new(id, format!("{id}.jpg"), None)
    }

    #[test]
    fn concat_examples() {
        let c = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(
            concat_text("Jay Chou", &c(&["singer", "actor", "director"])).unwrap(),
            "Jay Chou, singer, actor, director"
        );
        assert_eq!(concat_text("X", &[]).unwrap(), "X");
        assert_eq!(
            concat_text("Klipspringer", &c(&["animal", "antelope"])).unwrap(),
            "Klipspringer, animal, antelope"
        );
        assert!(matches!(concat_text(" ", &[]), Err(FusionError::EmptyName)));
    }

    #[test]
    fn stage1_threshold_boundary() {
        let e = entity(&[]);
        for (p, accept) in [(0.7, true), (0.5, true), (0.49, false)] {
            let scorer = Table::new(p);
            assert_eq!(stage1(&e, &image("i"), &scorer, ConceptStrategy::All, 0.5).unwrap(), (p, accept));
        }
        assert!(stage1(&e, &image("i"), &Table::new(0.5), ConceptStrategy::All, 1.0).is_err());
    }

    #[test]
    fn contribution_values() {
        assert_eq!(contribution(5, 1000, 10).unwrap(), 1.0);
        assert_eq!(contribution(10, 1000, 10).unwrap(), 1.0);
        assert!((contribution(100, 100, 10).unwrap() - 0.494_949_494_949_495).abs() < 1e-12);
        assert!((contribution(8, 100, 2).unwrap() - (1.0 / 3.0 - 0.01) / 0.99).abs() < 1e-12);
        assert!(contribution(101, 100, 10).is_err());
        assert!(contribution(1, 1, 10).is_err());
        assert!(contribution(0, 10, 10).is_err());
    }

    #[test]
    fn fusion_two_concepts() {
        assert!((fuse_evidence(&[(0.8, 1.0), (0.6, 0.5)]).unwrap() - 0.55).abs() < 1e-15);
        assert_eq!(fuse_evidence(&[(0.37, 1.0)]).unwrap(), 0.37);
        assert!(matches!(fuse_evidence(&[]), Err(FusionError::NoConcepts)));
    }

    #[test]
    fn evidence_fusion_scores_bare_concepts() {
        let e = entity(&["singer", "actor"]);
        let others: Vec<EntityRecord> = (0..20)
            .map(|i| EntityRecord::new(format!("o{i}"), "x", 0, vec!["actor".into()]))
            .chain(std::iter::once(e.clone()))
            .collect();
        let stats = compute_concept_stats(&others).unwrap();
        let scorer = Table::new(0.0).text("singer", 0.8).text("actor", 0.6);
        let (evidence, p_h, accept) =
            evidence_fusion(&e, &image("i"), &scorer, &stats, ConceptStrategy::All, 0.5, 10).unwrap();
        assert_eq!(evidence.len(), 2);
        assert_eq!(evidence[0].contribution, 1.0);
        let con_actor = contribution(21, 21, 10).unwrap();
        assert!((evidence[1].contribution - con_actor).abs() < 1e-15);
        assert!((p_h - (0.8 + 0.6 * con_actor) / 2.0).abs() < 1e-15);
        assert!(accept);
    }

    #[test]
    fn evidence_fusion_errors() {
        let e = entity(&["singer"]);
        let stats = compute_concept_stats(&[entity(&["actor"]), entity(&["actor"])]).unwrap();
        assert!(matches!(
            evidence_fusion(&e, &image("i"), &Table::new(0.1), &stats, ConceptStrategy::All, 0.5, 10),
            Err(FusionError::UnknownConcept(_))
        ));
        assert!(matches!(
            evidence_fusion(&e, &image("i"), &Table::new(0.1), &stats, ConceptStrategy::None, 0.5, 10),
            Err(FusionError::NoConcepts)
        ));
    }

    #[test]
    fn ground_pair_paths() {
        let e = entity(&["singer"]);
        let stats = compute_concept_stats(&[e.clone(), entity(&["actor"])]).unwrap();
        let config = GroundingConfig::default();

        let accepted = ground_pair(&e, &image("i"), &Table::new(0.9), &stats, &config).unwrap();
        assert!(accepted.final_label && accepted.evidence.is_empty() && accepted.p_h.is_none());

        let rescued = Table::new(0.0).text("Jay Chou, singer", 0.3).text("singer", 0.6);
        let v = ground_pair(&e, &image("i"), &rescued, &stats, &config).unwrap();
        assert_eq!((v.stage1_accept, v.p_h, v.final_label), (false, Some(0.6), true));

        let lost = Table::new(0.0).text("Jay Chou, singer", 0.3).text("singer", 0.2);
        let v = ground_pair(&e, &image("i"), &lost, &stats, &config).unwrap();
        assert_eq!((v.stage2_accept, v.final_label), (Some(false), false));
        assert!(v.is_consistent());

        let bare = entity(&[]);
        let v = ground_pair(&bare, &image("i"), &Table::new(0.3), &stats, &config).unwrap();
        assert!(v.p_h.is_none() && !v.final_label && v.is_consistent());

        let stage1_only = GroundingConfig {
            stages: Stages::ConceptIntegration,
            ..config
        };
        let v = ground_pair(&e, &image("i"), &rescued, &stats, &stage1_only).unwrap();
        assert!(v.p_h.is_none() && !v.final_label);
    }

    #[test]
    fn ranking_sorts_and_breaks_ties_by_id() {
        let e = entity(&[]);
        let scorer = Table::new(0.0).image("a", 0.9).image("b", 0.1);
        let ranked = rank_candidates(&e, &[image("b"), image("a")], &scorer, ConceptStrategy::None).unwrap();
        let ids: Vec<_> = ranked.iter().map(|r| r.image.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);

        let tied = Table::new(0.5);
        let ranked = rank_candidates(&e, &[image("b"), image("a")], &tied, ConceptStrategy::None).unwrap();
        let ids: Vec<_> = ranked.iter().map(|r| r.image.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);

        assert!(matches!(
            rank_candidates(&e, &[], &tied, ConceptStrategy::None),
            Err(FusionError::NoCandidates)
        ));
    }
}
