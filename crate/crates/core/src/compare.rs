//! Output-comparison primitives: exact, set, numeric-window, and
//! embedding-based semantic similarity with equivalence/difference
//! thresholds.
//!
//! Semantic comparison can land in a dead zone between the difference
//! threshold and the equivalence threshold; verdicts from that zone are
//! [`RelationVerdict::Indeterminate`] and never count as violations.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default score above which two outputs count as semantically equivalent.
pub const DEFAULT_EQUIVALENCE_THRESHOLD: f64 = 0.8;
/// Default score below which two outputs count as semantically different.
pub const DEFAULT_DIFFERENCE_THRESHOLD: f64 = 0.4;
/// Default absolute window for numeric equivalence.
pub const DEFAULT_NUMERIC_WINDOW: f64 = 0.1;

/// Errors from the comparison primitives.
#[derive(Debug, Error)]
pub enum CompareError {
    /// The two outputs cannot be compared under the requested relation.
    #[error("output kind mismatch: {0}")]
    OutputKindMismatch(String),
    /// Numeric comparison received a NaN or infinite value.
    #[error("non-finite numeric input")]
    NonFiniteInput,
    /// The embedding provider failed to produce vectors.
    #[error("embedding unavailable: {0}")]
    EmbeddingUnavailable(String),
}

/// Verdict of an output-relation check for one follow-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RelationVerdict {
    Satisfied,
    Violated,
    /// Semantic score fell in the dead zone; treated as not violated in
    /// summary statistics but reported distinctly.
    Indeterminate,
}

impl fmt::Display for RelationVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Satisfied => f.write_str("SATISFIED"),
            Self::Violated => f.write_str("VIOLATED"),
            Self::Indeterminate => f.write_str("INDETERMINATE"),
        }
    }
}

/// What a semantic comparison expects of the two outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemanticExpectation {
    Equivalent,
    Different,
}

/// Relation between two sets of output tuples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SetRelation {
    SetEqual,
    Subset,
    Superset,
    Disjoint,
    Overlap,
}

/// Source of embedding vectors for semantic comparison.
///
/// Implementations must tolerate concurrent invocations.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, CompareError>;
}

/// Comparator parameters plus the embedding provider handle.
#[derive(Clone)]
pub struct ComparatorConfig {
    /// Scores at or above this are equivalent. In (0, 1].
    pub equivalence_threshold: f64,
    /// Scores at or below this are different. In [0, 1), below equivalence.
    pub difference_threshold: f64,
    /// Absolute window for numeric equivalence. Non-negative.
    pub numeric_window: f64,
    pub provider: Arc<dyn EmbeddingProvider>,
}

impl fmt::Debug for ComparatorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComparatorConfig")
            .field("equivalence_threshold", &self.equivalence_threshold)
            .field("difference_threshold", &self.difference_threshold)
            .field("numeric_window", &self.numeric_window)
            .finish_non_exhaustive()
    }
}

impl ComparatorConfig {
    pub fn new(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            equivalence_threshold: DEFAULT_EQUIVALENCE_THRESHOLD,
            difference_threshold: DEFAULT_DIFFERENCE_THRESHOLD,
            numeric_window: DEFAULT_NUMERIC_WINDOW,
            provider,
        }
    }

    /// Default thresholds with the deterministic offline embedding provider.
    pub fn hermetic() -> Self {
        Self::new(Arc::new(HashedBagOfWords::default()))
    }

    pub fn with_thresholds(mut self, equivalence: f64, difference: f64, window: f64) -> Self {
        self.equivalence_threshold = equivalence;
        self.difference_threshold = difference;
        self.numeric_window = window;
        self
    }

    pub fn validate(&self) -> Result<(), CompareError> {
        let ok = self.equivalence_threshold > 0.0
            && self.equivalence_threshold <= 1.0
            && self.difference_threshold >= 0.0
            && self.difference_threshold < self.equivalence_threshold
            && self.numeric_window >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(CompareError::OutputKindMismatch(format!(
                "invalid thresholds: equivalence {}, difference {}, window {}",
                self.equivalence_threshold, self.difference_threshold, self.numeric_window
            )))
        }
    }
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Equality on trimmed, case-folded strings.
pub fn exact_equal(a: &str, b: &str) -> bool {
    normalize(a) == normalize(b)
}

fn normalize_tuple_set(set: &BTreeSet<Vec<String>>) -> BTreeSet<Vec<String>> {
    set.iter()
        .map(|t| t.iter().map(|f| normalize(f)).collect())
        .collect()
}

/// Standard set relation between two tuple sets, on normalized tuples.
///
/// Equality takes precedence over subset/superset, which take precedence
/// over disjointness: `({}, {x})` is `Subset`, not `Disjoint`.
pub fn set_compare(a: &BTreeSet<Vec<String>>, b: &BTreeSet<Vec<String>>) -> SetRelation {
    let a = normalize_tuple_set(a);
    let b = normalize_tuple_set(b);
    if a == b {
        SetRelation::SetEqual
    } else if a.is_subset(&b) {
        SetRelation::Subset
    } else if b.is_subset(&a) {
        SetRelation::Superset
    } else if a.is_disjoint(&b) {
        SetRelation::Disjoint
    } else {
        SetRelation::Overlap
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine similarity of the two texts' embedding vectors.
///
/// Byte-identical inputs short-circuit to 1.0 without calling the provider.
pub fn semantic_similarity(
    a: &str,
    b: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<f64, CompareError> {
    if a == b {
        return Ok(1.0);
    }
    let va = provider.embed(a)?;
    let vb = provider.embed(b)?;
    if va.len() != vb.len() {
        return Err(CompareError::EmbeddingUnavailable(format!(
            "dimension mismatch: {} vs {}",
            va.len(),
            vb.len()
        )));
    }
    Ok(cosine(&va, &vb))
}

/// Map a similarity score to a verdict under the given expectation.
///
/// Thresholds are inclusive: a score of exactly 0.8 is equivalent and a
/// score of exactly 0.4 is different. Scores strictly between the two
/// thresholds are indeterminate.
pub fn semantic_verdict(
    score: f64,
    expectation: SemanticExpectation,
    cfg: &ComparatorConfig,
) -> RelationVerdict {
    let equivalent = score >= cfg.equivalence_threshold;
    let different = score <= cfg.difference_threshold;
    match expectation {
        SemanticExpectation::Equivalent => {
            if equivalent {
                RelationVerdict::Satisfied
            } else if different {
                RelationVerdict::Violated
            } else {
                RelationVerdict::Indeterminate
            }
        }
        SemanticExpectation::Different => {
            if different {
                RelationVerdict::Satisfied
            } else if equivalent {
                RelationVerdict::Violated
            } else {
                RelationVerdict::Indeterminate
            }
        }
    }
}

/// Whether |a - b| <= window. Reflexive and symmetric, not transitive.
pub fn numeric_equivalent(a: f64, b: f64, window: f64) -> Result<bool, CompareError> {
    if !a.is_finite() || !b.is_finite() || !window.is_finite() {
        return Err(CompareError::NonFiniteInput);
    }
    Ok((a - b).abs() <= window)
}

/// Deterministic offline embedding provider.
///
/// Hashes lowercased alphanumeric tokens into a fixed-dimension
/// bag-of-words count vector. Token order does not matter, so word
/// permutations embed identically; texts with no shared tokens are
/// (near-)orthogonal. Used by the hermetic test path in place of a
/// remote embeddings endpoint.
#[derive(Debug, Clone)]
pub struct HashedBagOfWords {
    pub dimension: usize,
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        Self { dimension: 256 }
    }
}

impl HashedBagOfWords {
    pub fn vector(&self, text: &str) -> Vec<f64> {
        use sha2::{Digest, Sha256};
        let mut v = vec![0.0; self.dimension];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let digest = Sha256::digest(token.to_lowercase().as_bytes());
            let idx = u64::from_le_bytes(digest[..8].try_into().unwrap()) as usize;
            v[idx % self.dimension] += 1.0;
        }
        v
    }
}

impl EmbeddingProvider for HashedBagOfWords {
    fn embed(&self, text: &str) -> Result<Vec<f64>, CompareError> {
        Ok(self.vector(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_equal_cases() {
        assert!(exact_equal("unknown", "unknown"));
        assert!(!exact_equal("unknown", "cirque"));
        assert!(exact_equal("Cirque ", "cirque"));
    }

    fn tuples(items: &[&[&str]]) -> BTreeSet<Vec<String>> {
        items
            .iter()
            .map(|t| t.iter().map(|s| s.to_string()).collect())
            .collect()
    }

    #[test]
    fn set_compare_cases() {
        let xry = tuples(&[&["x", "r", "y"]]);
        assert_eq!(set_compare(&xry, &xry), SetRelation::SetEqual);
        assert_eq!(set_compare(&tuples(&[]), &xry), SetRelation::Subset);
        assert_eq!(
            set_compare(&tuples(&[&["a", "r", "b"], &["c", "s", "d"]]), &tuples(&[&["a", "r", "b"]])),
            SetRelation::Superset
        );
        assert_eq!(
            set_compare(&tuples(&[&["a"]]), &tuples(&[&["b"]])),
            SetRelation::Disjoint
        );
        assert_eq!(
            set_compare(&tuples(&[&["a"], &["b"]]), &tuples(&[&["b"], &["c"]])),
            SetRelation::Overlap
        );
        // Normalization applies before comparison.
        assert_eq!(
            set_compare(&tuples(&[&["X ", "r", "y"]]), &tuples(&[&["x", "R", "y"]])),
            SetRelation::SetEqual
        );
    }

    struct Stub(std::collections::HashMap<String, Vec<f64>>);

    impl EmbeddingProvider for Stub {
        fn embed(&self, text: &str) -> Result<Vec<f64>, CompareError> {
            self.0
                .get(text)
                .cloned()
                .ok_or_else(|| CompareError::EmbeddingUnavailable(text.to_string()))
        }
    }

    #[test]
    fn similarity_short_circuits_identical_strings() {
        // Provider knows nothing, so any call would error.
        let stub = Stub(Default::default());
        assert_eq!(semantic_similarity("s", "s", &stub).unwrap(), 1.0);
    }

    #[test]
    fn similarity_of_stub_vectors_matches_hand_computed_cosine() {
        let mut map = std::collections::HashMap::new();
        map.insert("a".to_string(), vec![1.0, 0.0]);
        map.insert("b".to_string(), vec![0.0, 1.0]);
        let frac = 1.0 / 2f64.sqrt();
        map.insert("c".to_string(), vec![frac, frac]);
        let stub = Stub(map);
        assert_eq!(semantic_similarity("a", "b", &stub).unwrap(), 0.0);
        let got = semantic_similarity("a", "c", &stub).unwrap();
        assert!((got - frac).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn verdict_thresholds_are_inclusive() {
        let cfg = ComparatorConfig::hermetic();
        use RelationVerdict::*;
        use SemanticExpectation::*;
        for (score, expected) in [
            (0.9, Satisfied),
            (0.8, Satisfied),
            (0.6, Indeterminate),
            (0.4, Violated),
            (0.3, Violated),
        ] {
            assert_eq!(semantic_verdict(score, Equivalent, &cfg), expected, "score {score}");
        }
        assert_eq!(semantic_verdict(0.3, Different, &cfg), Satisfied);
        assert_eq!(semantic_verdict(0.9, Different, &cfg), Violated);
        assert_eq!(semantic_verdict(0.6, Different, &cfg), Indeterminate);
    }

    #[test]
    fn numeric_window_boundaries() {
        assert!(numeric_equivalent(0.5, 0.55, 0.1).unwrap());
        assert!(!numeric_equivalent(0.2, 0.35, 0.1).unwrap());
        assert!(numeric_equivalent(0.4, 0.5, 0.1).unwrap());
        assert!(matches!(
            numeric_equivalent(f64::NAN, 0.5, 0.1),
            Err(CompareError::NonFiniteInput)
        ));
    }

    #[test]
    fn hashed_provider_is_order_insensitive_and_deterministic() {
        let p = HashedBagOfWords::default();
        assert_eq!(p.vector("a b"), p.vector("b a"));
        assert_eq!(p.vector("same text"), p.vector("same text"));
        assert!(p.vector("").iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_vector_similarity_is_zero() {
        let p = HashedBagOfWords::default();
        assert_eq!(semantic_similarity("", "words here", &p).unwrap(), 0.0);
    }
}
