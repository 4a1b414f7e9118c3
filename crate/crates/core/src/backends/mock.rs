//! Deterministic rule-based backends.
//!
//! The three mocks are mutually consistent: the generator truncates a
//! sentence to the word budget of the requested level, and the estimator
//! maps word counts back to levels using the same bands. A sentence long
//! enough for its target therefore always verifies exactly.
//!
//! | level | generator keeps | estimator band |
//! |-------|-----------------|----------------|
//! | A1    | 6 words         | <= 7           |
//! | A2    | 10              | <= 12          |
//! | B1    | 15              | <= 18          |
//! | B2    | 21              | <= 25          |
//! | C1    | 28              | <= 32          |
//! | C2    | 36              | otherwise      |

use std::collections::BTreeSet;

use super::{
    require_text, BackendError, EstimatorVerdict, GenerationRequest, Generator, LevelEstimator, SimilarityBackend,
};
use crate::levels::{parse_level, ProficiencyLevel};

/// Line prefix under which prompts carry the sentence to simplify.
pub const SOURCE_MARKER: &str = "Sentence:";
/// Phrase immediately preceding the target level symbol in prompts.
pub const TARGET_MARKER: &str = "to CEFR level ";

pub fn word_budget(level: ProficiencyLevel) -> usize {
    match level {
        ProficiencyLevel::A1 => 6,
        ProficiencyLevel::A2 => 10,
        ProficiencyLevel::B1 => 15,
        ProficiencyLevel::B2 => 21,
        ProficiencyLevel::C1 => 28,
        ProficiencyLevel::C2 => 36,
    }
}

pub fn level_for_word_count(words: usize) -> ProficiencyLevel {
    match words {
        0..=7 => ProficiencyLevel::A1,
        8..=12 => ProficiencyLevel::A2,
        13..=18 => ProficiencyLevel::B1,
        19..=25 => ProficiencyLevel::B2,
        26..=32 => ProficiencyLevel::C1,
        _ => ProficiencyLevel::C2,
    }
}

/// Keeps the first `word_budget(target)` words and ends with a period.
pub fn truncate_to_level(source: &str, target: ProficiencyLevel) -> String {
    let kept: Vec<&str> = source.split_whitespace().take(word_budget(target)).collect();
    let joined = kept.join(" ");
    let mut out = joined.trim_end_matches(['.', '!', '?', ',', ';', ':']).to_string();
    out.push('.');
    out
}

/// Reads the last user message of a request, finds the sentence after
/// [`SOURCE_MARKER`] and the level after [`TARGET_MARKER`], and returns
/// [`truncate_to_level`] of the two.
#[derive(Debug, Clone, Default)]
pub struct MockGenerator {
    /// Sentences containing this substring produce a transport failure,
    /// for fault-injection tests.
    pub fail_on: Option<String>,
}

impl MockGenerator {
    pub fn failing_on(needle: impl Into<String>) -> Self {
        Self {
            fail_on: Some(needle.into()),
        }
    }
}

pub fn parse_mock_prompt(content: &str) -> Option<(String, ProficiencyLevel)> {
    let source = content
        .lines()
        .rev()
        .find_map(|l| l.trim_start().strip_prefix(SOURCE_MARKER))?
        .trim()
        .to_string();
    let at = content.rfind(TARGET_MARKER)? + TARGET_MARKER.len();
    let symbol: String = content[at..].chars().take(2).collect();
    let target = parse_level(&symbol).ok()?;
    if source.is_empty() {
        return None;
    }
    Some((source, target))
}

impl Generator for MockGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        request.validate()?;
        let msg = request
            .last_user_message()
            .ok_or_else(|| BackendError::Precondition("no user message".into()))?;
        let (source, target) = parse_mock_prompt(&msg.content).ok_or_else(|| {
            BackendError::Precondition(format!(
                "mock generator needs a '{SOURCE_MARKER}' line and '{TARGET_MARKER}<level>'"
            ))
        })?;
        if let Some(needle) = &self.fail_on {
            if source.contains(needle.as_str()) {
                return Err(BackendError::Transport(format!("injected fault on {needle:?}")));
            }
        }
        Ok(truncate_to_level(&source, target))
    }
}

/// Word-count estimator.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEstimator;

impl LevelEstimator for MockEstimator {
    fn estimate_level(&self, text: &str, _language: &str) -> Result<EstimatorVerdict, BackendError> {
        require_text("text", text)?;
        let words = text.split_whitespace().count();
        Ok(EstimatorVerdict {
            level: level_for_word_count(words),
            raw_score: Some(words as f64),
        })
    }
}

/// Cosine similarity of binary bag-of-words vectors over lowercased
/// whitespace tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockSimilarity;

fn token_set(text: &str) -> BTreeSet<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

impl SimilarityBackend for MockSimilarity {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError> {
        require_text("first text", a)?;
        require_text("second text", b)?;
        let (sa, sb) = (token_set(a), token_set(b));
        let shared = sa.intersection(&sb).count() as f64;
        Ok(shared / ((sa.len() as f64).sqrt() * (sb.len() as f64).sqrt()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatMessage, GenerationProfile};
    use ProficiencyLevel::*;

    fn request(text: &str, target: ProficiencyLevel) -> GenerationRequest {
        GenerationRequest::new(
            vec![
                ChatMessage::system("sys"),
                ChatMessage::user(format!("Simplify {TARGET_MARKER}{target}.\n{SOURCE_MARKER} {text}")),
            ],
            &GenerationProfile::default(),
        )
    }

    #[test]
    fn generator_is_deterministic_and_truncates() {
        let g = MockGenerator::default();
        let req = request("alpha beta gamma delta epsilon", A1);
        let a = g.generate(&req).unwrap();
        assert_eq!(a, "alpha beta gamma delta epsilon.");
        assert_eq!(g.generate(&req).unwrap(), a);

        let long: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let out = g.generate(&request(&long.join(" "), A2)).unwrap();
        assert_eq!(out.split_whitespace().count(), 10);
        assert!(out.ends_with("w9."));
    }

    #[test]
    fn generator_rejects_empty_and_unmarked() {
        let g = MockGenerator::default();
        let empty = GenerationRequest::new(vec![], &GenerationProfile::default());
        assert!(matches!(g.generate(&empty), Err(BackendError::Precondition(_))));
        let unmarked = GenerationRequest::new(vec![ChatMessage::user("hello there")], &GenerationProfile::default());
        assert!(g.generate(&unmarked).is_err());
    }

    #[test]
    fn injected_fault() {
        let g = MockGenerator::failing_on("poison");
        assert!(matches!(
            g.generate(&request("a poison pill", A1)),
            Err(BackendError::Transport(_))
        ));
        assert!(g.generate(&request("a clean pill", A1)).is_ok());
    }

    #[test]
    fn trailing_punctuation_is_not_doubled() {
        assert_eq!(
            truncate_to_level("That's a good question.", A1),
            "That's a good question."
        );
        assert_eq!(truncate_to_level("Really?!", A1), "Really.");
    }

    #[test]
    fn estimator_thresholds() {
        let e = MockEstimator;
        assert_eq!(e.estimate_level("That's a good question.", "en").unwrap().level, A1);
        let s25 = vec!["w"; 25].join(" ");
        assert_eq!(e.estimate_level(&s25, "en").unwrap().level, B2);
        let s26 = vec!["w"; 26].join(" ");
        assert_eq!(e.estimate_level(&s26, "en").unwrap().level, C1);
        assert!(e.estimate_level("", "en").is_err());
        // budgets land inside their own band
        for l in ProficiencyLevel::ALL {
            assert_eq!(level_for_word_count(word_budget(l)), l);
        }
    }

    #[test]
    fn similarity_examples() {
        let s = MockSimilarity;
        assert!((s.similarity("a b c", "a b c").unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(s.similarity("a b", "c d").unwrap(), 0.0);
        // (1,1,0).(1,0,1) / (sqrt2 * sqrt2)
        assert!((s.similarity("a b", "a c").unwrap() - 0.5).abs() < 1e-12);
        assert!((s.similarity("A b", "a B").unwrap() - 1.0).abs() < 1e-12);
        assert!(s.similarity("", "a").is_err());
    }
}
