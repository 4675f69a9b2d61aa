//! Forward-only reference for the two-level contrastive objective.
//!
//! The entity level is binary cross-entropy over every in-batch
//! `(text_a, image_b)` cell, with only the diagonal labeled positive. The
//! concept level scores each concept of entity `a` against every image `b`
//! and labels the cell positive when entity `b` carries that concept too.
//! Losses are plain (non-negative) sums; no gradients are computed here.

use serde::{Deserialize, Serialize};

use crate::corpus::EntityRecord;
use crate::error::LossError;

/// Probabilities are clamped to `[EPSILON, 1 - EPSILON]` before taking logs.
pub const EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub entities: Vec<EntityRecord>,
    /// `entity_predictions[a][b]`: prediction for text `a` against image `b`.
    pub entity_predictions: Vec<Vec<f64>>,
    /// `concept_predictions[a][k][b]`: concept `k` of entity `a` against image `b`.
    pub concept_predictions: Vec<Vec<Vec<f64>>>,
    pub entity_labels: Vec<Vec<u8>>,
    pub concept_labels: Vec<Vec<Vec<u8>>>,
}

impl BatchSpec {
    /// Builds a batch whose labels follow from the entities' concept lists.
    pub fn with_built_labels(
        entities: Vec<EntityRecord>,
        entity_predictions: Vec<Vec<f64>>,
        concept_predictions: Vec<Vec<Vec<f64>>>,
    ) -> Self {
        let (entity_labels, concept_labels) = build_labels(&entities);
        Self {
            entities,
            entity_predictions,
            concept_predictions,
            entity_labels,
            concept_labels,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.entities.len()
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let n = self.batch_size();
        check_square("entity_predictions", &self.entity_predictions, n)?;
        check_square("entity_labels", &self.entity_labels, n)?;
        if self.concept_predictions.len() != n || self.concept_labels.len() != n {
            return Err(LossError::Dimension(format!(
                "expected {n} concept blocks, got {} predictions and {} labels",
                self.concept_predictions.len(),
                self.concept_labels.len()
            )));
        }
        for (a, entity) in self.entities.iter().enumerate() {
            let m = entity.concepts.len();
            for (name, rows) in [("concept_predictions", self.concept_predictions[a].len()), ("concept_labels", self.concept_labels[a].len())] {
                if rows != m {
                    return Err(LossError::Dimension(format!(
                        "{name}[{a}] has {rows} rows, entity {:?} has {m} concepts",
                        entity.id
                    )));
                }
            }
            for k in 0..m {
                if self.concept_predictions[a][k].len() != n || self.concept_labels[a][k].len() != n {
                    return Err(LossError::Dimension(format!("concept row [{a}][{k}] must have {n} columns")));
                }
            }
        }

        for (a, row) in self.entity_predictions.iter().enumerate() {
            for (b, &p) in row.iter().enumerate() {
                check_prediction(p, || format!("entity_predictions[{a}][{b}]"))?;
            }
        }
        for (a, block) in self.concept_predictions.iter().enumerate() {
            for (k, row) in block.iter().enumerate() {
                for (b, &p) in row.iter().enumerate() {
                    check_prediction(p, || format!("concept_predictions[{a}][{k}][{b}]"))?;
                }
            }
        }

        for (a, row) in self.entity_labels.iter().enumerate() {
            if row.iter().any(|&l| l > 1) {
                return Err(LossError::Labels(format!("entity_labels row {a} is not binary")));
            }
            if row[a] != 1 {
                return Err(LossError::Labels(format!("entity_labels[{a}][{a}] must be 1")));
            }
        }
        let (_, expected) = build_labels(&self.entities);
        if expected != self.concept_labels {
            return Err(LossError::Labels(
                "concept_labels disagree with the entities' concept lists".into(),
            ));
        }
        Ok(())
    }
}

fn check_square<T>(name: &str, m: &[Vec<T>], n: usize) -> Result<(), LossError> {
    if m.len() != n || m.iter().any(|row| row.len() != n) {
        return Err(LossError::Dimension(format!("{name} must be {n}x{n}")));
    }
    Ok(())
}

fn check_prediction(p: f64, location: impl FnOnce() -> String) -> Result<(), LossError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(LossError::Prediction {
            location: location(),
            value: p,
        })
    }
}

/// Binary cross-entropy of one cell.
pub fn bce(label: u8, p: f64) -> f64 {
    let p = p.clamp(EPSILON, 1.0 - EPSILON);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// In-batch labels: identity for entities; concept `k` of entity `a` is
/// positive at image `b` iff entity `b` carries that concept.
pub fn build_labels(entities: &[EntityRecord]) -> (Vec<Vec<u8>>, Vec<Vec<Vec<u8>>>) {
    let n = entities.len();
    let entity_labels = (0..n)
        .map(|a| (0..n).map(|b| u8::from(a == b)).collect())
        .collect();
    let concept_labels = entities
        .iter()
        .map(|ea| {
            ea.concepts
                .iter()
                .map(|c| entities.iter().map(|eb| u8::from(eb.concepts.contains(c))).collect())
                .collect()
        })
        .collect();
    (entity_labels, concept_labels)
}

/// Sum of BCE over all `n²` cells, row-major.
pub fn entity_loss(spec: &BatchSpec) -> Result<f64, LossError> {
    spec.validate()?;
    Ok(entity_loss_unchecked(spec))
}

fn entity_loss_unchecked(spec: &BatchSpec) -> f64 {
    spec.entity_predictions
        .iter()
        .zip(&spec.entity_labels)
        .flat_map(|(preds, labels)| preds.iter().zip(labels))
        .map(|(&p, &l)| bce(l, p))
        .sum()
}

/// Sum of BCE over all `(a, k, b)` cells, accumulated in `(a, b, k)` order.
pub fn concept_loss(spec: &BatchSpec) -> Result<f64, LossError> {
    spec.validate()?;
    Ok(concept_loss_unchecked(spec))
}

fn concept_loss_unchecked(spec: &BatchSpec) -> f64 {
    let n = spec.batch_size();
    let mut total = 0.0;
    for (preds, labels) in spec.concept_predictions.iter().zip(&spec.concept_labels) {
        for b in 0..n {
            for (p_row, l_row) in preds.iter().zip(labels) {
                total += bce(l_row[b], p_row[b]);
            }
        }
    }
    total
}

pub fn total_loss(spec: &BatchSpec) -> Result<f64, LossError> {
    spec.validate()?;
    Ok(entity_loss_unchecked(spec) + concept_loss_unchecked(spec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub entity_loss: f64,
    pub concept_loss: f64,
    pub total_loss: f64,
    pub entity_cells: usize,
    pub concept_cells: usize,
    /// `entity_loss / entity_cells`.
    pub mean_entity_loss: f64,
    /// `concept_loss / concept_cells`, zero for concept-free batches.
    pub mean_concept_loss: f64,
}

pub fn loss_report(spec: &BatchSpec) -> Result<LossReport, LossError> {
    spec.validate()?;
    let entity = entity_loss_unchecked(spec);
    let concept = concept_loss_unchecked(spec);
    let n = spec.batch_size();
    let entity_cells = n * n;
    let concept_cells = spec.entities.iter().map(|e| e.concepts.len()).sum::<usize>() * n;
    let mean = |sum: f64, cells: usize| if cells == 0 { 0.0 } else { sum / cells as f64 };
    Ok(LossReport {
        entity_loss: entity,
        concept_loss: concept,
        total_loss: entity + concept,
        entity_cells,
        concept_cells,
        mean_entity_loss: mean(entity, entity_cells),
        mean_concept_loss: mean(concept, concept_cells),
    })
}

/// `batch.json` conformance fixture: a batch plus the values an independent
/// implementation computed for it. Labels may be omitted and are then built
/// from the entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFixture {
    pub entities: Vec<EntityRecord>,
    pub entity_predictions: Vec<Vec<f64>>,
    #[serde(default)]
    pub concept_predictions: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub entity_labels: Option<Vec<Vec<u8>>>,
    #[serde(default)]
    pub concept_labels: Option<Vec<Vec<Vec<u8>>>>,
    pub expected: ExpectedLosses,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedLosses {
    pub entity_loss: f64,
    pub concept_loss: f64,
    pub total_loss: f64,
}

impl BatchFixture {
    pub fn into_spec(self) -> (BatchSpec, ExpectedLosses) {
        let (built_entity, built_concept) = build_labels(&self.entities);
        let concept_predictions = self
            .concept_predictions
            .unwrap_or_else(|| self.entities.iter().map(|_| Vec::new()).collect());
        let spec = BatchSpec {
            entity_predictions: self.entity_predictions,
            concept_predictions,
            entity_labels: self.entity_labels.unwrap_or(built_entity),
            concept_labels: self.concept_labels.unwrap_or(built_concept),
            entities: self.entities,
        };
        (spec, self.expected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformanceResult {
    pub report: LossReport,
    pub expected: ExpectedLosses,
    pub max_abs_deviation: f64,
    pub passed: bool,
}

/// Compares the reference losses with a fixture's expected values.
pub fn check_fixture(fixture: BatchFixture, tolerance: f64) -> Result<ConformanceResult, LossError> {
    let (spec, expected) = fixture.into_spec();
    let report = loss_report(&spec)?;
    let max_abs_deviation = [
        (report.entity_loss - expected.entity_loss).abs(),
        (report.concept_loss - expected.concept_loss).abs(),
        (report.total_loss - expected.total_loss).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Ok(ConformanceResult {
        report,
        expected,
        passed: max_abs_deviation <= tolerance,
        max_abs_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn e(id: &str, concepts: &[&str]) -> EntityRecord {
        EntityRecord::new(id, id, 0, concepts.iter().map(|c| c.to_string()).collect())
    }

    #[test]
    fn bce_closed_forms() {
        assert!(bce(1, 1.0 - EPSILON) < 1e-6);
        assert!((bce(1, 0.5) - LN_2).abs() < 1e-15);
        assert!((bce(0, 0.5) - LN_2).abs() < 1e-15);
        assert!(bce(1, 0.0).is_finite());
        assert!(bce(0, 1.0).is_finite());
    }

    #[test]
    fn single_cell_entity_loss() {
        let spec = BatchSpec::with_built_labels(vec![e("a", &[])], vec![vec![0.5]], vec![vec![]]);
        assert!((entity_loss(&spec).unwrap() - LN_2).abs() < 1e-12);
        assert_eq!(concept_loss(&spec).unwrap(), 0.0);
        assert_eq!(total_loss(&spec).unwrap(), entity_loss(&spec).unwrap());
    }

    #[test]
    fn single_concept_cell() {
        let spec = BatchSpec::with_built_labels(vec![e("a", &["x"])], vec![vec![1.0]], vec![vec![vec![0.5]]]);
        assert!((concept_loss(&spec).unwrap() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn labels_follow_shared_concepts() {
        let (el, cl) = build_labels(&[e("A", &["person"]), e("B", &["person"])]);
        assert_eq!(el, vec![vec![1, 0], vec![0, 1]]);
        assert_eq!(cl[0][0], vec![1, 1]);
        let (_, cl) = build_labels(&[e("A", &["x"]), e("B", &["y"])]);
        assert_eq!(cl, vec![vec![vec![1, 0]], vec![vec![0, 1]]]);
        assert_eq!(build_labels(&[e("A", &[])]).0, vec![vec![1]]);
    }

    #[test]
    fn perfect_predictions_cost_nothing() {
        let entities = vec![e("A", &["person", "x"]), e("B", &["person"])];
        let (el, cl) = build_labels(&entities);
        let to_f = |rows: &Vec<Vec<u8>>| rows.iter().map(|r| r.iter().map(|&l| f64::from(l)).collect()).collect();
        let spec = BatchSpec {
            entity_predictions: to_f(&el),
            concept_predictions: cl.iter().map(to_f).collect(),
            entity_labels: el,
            concept_labels: cl,
            entities,
        };
        assert!(total_loss(&spec).unwrap() < 1e-5);
    }

    #[test]
    fn dimension_and_label_errors() {
        let mut spec = BatchSpec::with_built_labels(vec![e("a", &[]), e("b", &[])], vec![vec![0.5; 2]; 2], vec![vec![], vec![]]);
        assert!(entity_loss(&spec).is_ok());
        spec.entity_predictions[1].pop();
        assert!(matches!(entity_loss(&spec), Err(LossError::Dimension(_))));
        spec.entity_predictions[1].push(0.5);
        spec.entity_labels[0][0] = 0;
        assert!(matches!(entity_loss(&spec), Err(LossError::Labels(_))));
        spec.entity_labels[0][0] = 1;
        spec.entity_predictions[0][1] = 1.5;
        assert!(matches!(total_loss(&spec), Err(LossError::Prediction { .. })));
    }

    #[test]
    fn fixture_roundtrip() {
        let json = r#"{"entities":[{"id":"a","name":"a","viewtimes":0,"concepts":[]}],
            "entity_predictions":[[0.5]],
            "expected":{"entity_loss":0.6931471805599453,"concept_loss":0.0,"total_loss":0.6931471805599453}}"#;
        let fixture: BatchFixture = serde_json::from_str(json).unwrap();
        let result = check_fixture(fixture, 1e-12).unwrap();
        assert!(result.passed, "{result:?}");
    }
}
