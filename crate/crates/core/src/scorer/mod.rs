//! Image-text match predictors.
//!
//! A [`Scorer`] maps `(text, image)` to a match probability in `[0, 1]`. Three
//! implementations ship: a seeded synthetic world for desk-scale experiments,
//! a caching wrapper and an HTTP client for an external model service.

mod cache;
mod remote;
mod synthetic;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::CachedScorer;
pub use remote::{RemoteScorer, RemoteScorerConfig};
pub use synthetic::{make_synthetic_scorer, SyntheticScorer, SyntheticWorldConfig};

use crate::corpus::ImageRef;
use crate::error::ScoreError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub text: String,
    pub image: ImageRef,
}

impl ScoreRequest {
    pub fn new(text: impl Into<String>, image: ImageRef) -> Result<Self, ScoreError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ScoreError::EmptyText);
        }
        Ok(Self { text, image })
    }
}

/// Thread-safe image-text match predictor.
pub trait Scorer: Send + Sync {
    fn score(&self, request: &ScoreRequest) -> Result<f64, ScoreError>;

    /// Element-wise [`Scorer::score`]; order preserved. The first failing
    /// element (by index) fails the whole batch.
    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<f64>, ScoreError> {
        let results: Vec<Result<f64, ScoreError>> = requests.par_iter().map(|r| self.score(r)).collect();
        results
            .into_iter()
            .enumerate()
            .map(|(index, r)| {
                r.map_err(|source| ScoreError::Batch {
                    index,
                    source: Box::new(source),
                })
            })
            .collect()
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, request: &ScoreRequest) -> Result<f64, ScoreError> {
        (**self).score(request)
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<f64>, ScoreError> {
        (**self).score_batch(requests)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score(&self, request: &ScoreRequest) -> Result<f64, ScoreError> {
        (**self).score(request)
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<f64>, ScoreError> {
        (**self).score_batch(requests)
    }
}

impl<S: Scorer + ?Sized> Scorer for std::sync::Arc<S> {
    fn score(&self, request: &ScoreRequest) -> Result<f64, ScoreError> {
        (**self).score(request)
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<f64>, ScoreError> {
        (**self).score_batch(requests)
    }
}

pub fn sigmoid(logit: f64) -> f64 {
    1.0 / (1.0 + (-logit).exp())
}

/// Rejects anything outside `[0, 1]`, NaN included. Never clamps.
pub(crate) fn check_probability(index: usize, value: f64) -> Result<f64, ScoreError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ScoreError::OutOfRange { index, value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(f64);

    impl Scorer for Fixed {
        fn score(&self, request: &ScoreRequest) -> Result<f64, ScoreError> {
            if request.text == "bad" {
                return Err(ScoreError::Transport("boom".into()));
            }
            check_probability(0, self.0)
        }
    }

    fn req(text: &str) -> ScoreRequest {
        ScoreRequest::new(text, ImageRef::new("i", "i.jpg", None)).unwrap()
    }

    #[test]
    fn empty_text_rejected() {
        assert!(matches!(
            ScoreRequest::new("  ", ImageRef::new("i", "i.jpg", None)),
            Err(ScoreError::EmptyText)
        ));
    }

    #[test]
    fn batch_reports_failing_index() {
        let s = Fixed(0.4);
        assert!(s.score_batch(&[]).unwrap().is_empty());
        assert_eq!(s.score_batch(&[req("a"), req("b")]).unwrap(), vec![0.4, 0.4]);
        match s.score_batch(&[req("a"), req("bad"), req("bad")]) {
            Err(ScoreError::Batch { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_is_not_clamped() {
        assert!(check_probability(0, 1.3).is_err());
        assert!(check_probability(0, f64::NAN).is_err());
        assert!(check_probability(0, -0.0).is_ok());
    }
}
