//! Exact-match memoization.
//!
//! Estimates and similarities are always cached. Generations are cached
//! only for reproducible requests (temperature 0, sampling off); anything
//! else goes upstream every time.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::Mutex;

use super::{BackendError, EstimatorVerdict, GenerationRequest, Generator, LevelEstimator, SimilarityBackend};

#[derive(Debug)]
struct Memo<K, V>(Mutex<HashMap<K, V>>);

impl<K: Eq + Hash, V: Clone> Memo<K, V> {
    fn new() -> Self {
        Self(Mutex::new(HashMap::new()))
    }

    fn get_or_try(&self, key: K, f: impl FnOnce() -> Result<V, BackendError>) -> Result<V, BackendError> {
        if let Some(v) = self.0.lock().expect("cache poisoned").get(&key) {
            return Ok(v.clone());
        }
        // computed outside the lock; concurrent misses may both go upstream
        let v = f()?;
        self.0.lock().expect("cache poisoned").entry(key).or_insert(v.clone());
        Ok(v)
    }

    fn len(&self) -> usize {
        self.0.lock().expect("cache poisoned").len()
    }
}

#[derive(Debug)]
pub struct Cached<B> {
    inner: B,
    generations: Memo<String, String>,
    estimates: Memo<(String, String), EstimatorVerdict>,
    similarities: Memo<(String, String), u64>,
}

pub fn cached<B>(backend: B) -> Cached<B> {
    Cached {
        inner: backend,
        generations: Memo::new(),
        estimates: Memo::new(),
        similarities: Memo::new(),
    }
}

impl<B> Cached<B> {
    pub fn inner(&self) -> &B {
        &self.inner
    }

    /// Number of distinct cached entries across all operations.
    pub fn entries(&self) -> usize {
        self.generations.len() + self.estimates.len() + self.similarities.len()
    }
}

impl<B: Generator> Generator for Cached<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        if !request.is_reproducible() {
            return self.inner.generate(request);
        }
        let key = serde_json::to_string(request).expect("request serializes");
        self.generations.get_or_try(key, || self.inner.generate(request))
    }
}

impl<B: LevelEstimator> LevelEstimator for Cached<B> {
    fn estimate_level(&self, text: &str, language: &str) -> Result<EstimatorVerdict, BackendError> {
        self.estimates.get_or_try((text.to_string(), language.to_string()), || {
            self.inner.estimate_level(text, language)
        })
    }
}

impl<B: SimilarityBackend> SimilarityBackend for Cached<B> {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError> {
        self.similarities
            .get_or_try((a.to_string(), b.to_string()), || {
                self.inner.similarity(a, b).map(f64::to_bits)
            })
            .map(f64::from_bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockEstimator, MockGenerator, MockSimilarity, SOURCE_MARKER, TARGET_MARKER};
    use crate::backends::{ChatMessage, GenerationProfile};
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[derive(Default)]
    struct Counting {
        calls: AtomicUsize,
    }

    impl Counting {
        fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl Generator for Counting {
        fn generate(&self, r: &GenerationRequest) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            MockGenerator::default().generate(r)
        }
    }

    impl LevelEstimator for Counting {
        fn estimate_level(&self, t: &str, l: &str) -> Result<EstimatorVerdict, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            MockEstimator.estimate_level(t, l)
        }
    }

    impl SimilarityBackend for Counting {
        fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            MockSimilarity.similarity(a, b)
        }
    }

    fn request(temperature: f64) -> GenerationRequest {
        GenerationRequest::new(
            vec![ChatMessage::user(format!(
                "{TARGET_MARKER}A1\n{SOURCE_MARKER} one two three"
            ))],
            &GenerationProfile {
                temperature,
                ..Default::default()
            },
        )
    }

    #[test]
    fn estimates_hit_cache() {
        let c = cached(Counting::default());
        let a = c.estimate_level("a b c", "en").unwrap();
        let b = c.estimate_level("a b c", "en").unwrap();
        assert_eq!(a, b);
        assert_eq!(c.inner().calls(), 1);
        c.estimate_level("a b c d", "en").unwrap();
        assert_eq!(c.inner().calls(), 2);
    }

    #[test]
    fn similarities_hit_cache() {
        let c = cached(Counting::default());
        let first = c.similarity("a b", "a c").unwrap();
        assert!((first - 0.5).abs() < 1e-12);
        assert_eq!(c.similarity("a b", "a c").unwrap().to_bits(), first.to_bits());
        assert_eq!(c.inner().calls(), 1);
    }

    #[test]
    fn generation_cached_only_when_reproducible() {
        let c = cached(Counting::default());
        c.generate(&request(0.0)).unwrap();
        c.generate(&request(0.0)).unwrap();
        assert_eq!(c.inner().calls(), 1);
        c.generate(&request(0.7)).unwrap();
        c.generate(&request(0.7)).unwrap();
        assert_eq!(c.inner().calls(), 3);
    }

    #[test]
    fn errors_are_not_cached() {
        let c = cached(Counting::default());
        assert!(c.estimate_level("", "en").is_err());
        assert!(c.estimate_level("", "en").is_err());
        assert_eq!(c.inner().calls(), 2);
        assert_eq!(c.entries(), 0);
    }
}
