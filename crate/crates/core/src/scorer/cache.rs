use std::collections::HashMap;
use std::sync::RwLock;

use super::{ScoreRequest, Scorer};
use crate::error::ScoreError;

/// Memoizes successful predictions keyed by `(text, image id)`. Errors are
/// never cached.
pub struct CachedScorer<S> {
    inner: S,
    cache: RwLock<HashMap<(String, String), f64>>,
}

impl<S: Scorer> CachedScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: Scorer> Scorer for CachedScorer<S> {
    fn score(&self, request: &ScoreRequest) -> Result<f64, ScoreError> {
        let key = (request.text.clone(), request.image.id.clone());
        if let Some(&hit) = self.cache.read().expect("cache lock poisoned").get(&key) {
            return Ok(hit);
        }
        let value = self.inner.score(request)?;
        // A concurrent miss may have filled the slot first; keep that value.
        Ok(*self.cache.write().expect("cache lock poisoned").entry(key).or_insert(value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ImageRef;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting(AtomicUsize);

    impl Scorer for Counting {
        fn score(&self, request: &ScoreRequest) -> Result<f64, ScoreError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(request.text.len() as f64 / 100.0)
        }
    }

    #[test]
    fn second_lookup_hits_cache() {
        let cached = CachedScorer::new(Counting(AtomicUsize::new(0)));
        let r = ScoreRequest::new("hello", ImageRef::new("i", "i", None)).unwrap();
        assert_eq!(cached.score(&r).unwrap(), 0.05);
        assert_eq!(cached.score(&r).unwrap(), 0.05);
        assert_eq!(cached.inner().0.load(Ordering::SeqCst), 1);
        assert_eq!(cached.len(), 1);
    }
}
