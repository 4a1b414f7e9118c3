//! One-step simplification of dev sentences followed by level
//! verification. Reward construction and exemplar harvesting both consume
//! these records, so a single pass over the dev split can serve both.

use serde::{Deserialize, Serialize};

use crate::backends::{GenerationProfile, Generator, LevelEstimator};
use crate::corpus::LabeledSentence;
use crate::exemplars::fallback_exemplars;
use crate::levels::{ProficiencyLevel, Transition};
use crate::orchestrator::{simplify_once, PromptConfig};
use crate::par::Parallelism;

/// Everything a one-step validation call needs. The prompt is used in
/// single-case mode with training sentences at the target level as
/// examples; history is never included.
#[derive(Clone, Copy)]
pub struct OneStepContext<'a> {
    pub train: &'a [LabeledSentence],
    pub generator: &'a dyn Generator,
    pub estimator: &'a dyn LevelEstimator,
    pub prompt: &'a PromptConfig,
    pub profile: &'a GenerationProfile,
    pub parallelism: Parallelism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub transition: Transition,
    pub sentence_id: String,
    pub source_text: String,
    pub output: Option<String>,
    pub achieved: Option<ProficiencyLevel>,
    pub error: Option<String>,
}

impl ValidationRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.achieved.is_some()
    }
}

/// Simplifies every dev sentence at the transition's source level (the
/// first `sample_cap` of them in corpus order, when capped) straight to the
/// target, then asks the estimator for the achieved level. Records come
/// back in corpus order; failures are recorded, not raised.
pub fn validate_transition(
    dev: &[LabeledSentence],
    transition: Transition,
    sample_cap: Option<usize>,
    ctx: &OneStepContext<'_>,
) -> Vec<ValidationRecord> {
    let pool: Vec<&LabeledSentence> = dev
        .iter()
        .filter(|s| s.level == transition.source())
        .take(sample_cap.unwrap_or(usize::MAX))
        .collect();
    // without training sentences at the target the prompt goes zero-shot
    let examples = fallback_exemplars(ctx.train, transition, ctx.prompt.single_case_count.max(1)).ok();
    let mut prompt = ctx.prompt.clone();
    prompt.include_history = false;
    prompt.include_semantic_exemplars = false;

    ctx.parallelism.map(&pool, |s| {
        let mut rec = ValidationRecord {
            transition,
            sentence_id: s.id.clone(),
            source_text: s.text.clone(),
            output: None,
            achieved: None,
            error: None,
        };
        match simplify_once(
            &s.text,
            transition,
            examples.as_ref(),
            &prompt,
            ctx.profile,
            ctx.generator,
        ) {
            Ok(step) => {
                match ctx.estimator.estimate_level(&step.extracted_text, &s.language) {
                    Ok(v) => rec.achieved = Some(v.level),
                    Err(e) => rec.error = Some(format!("estimator: {e}")),
                }
                rec.output = Some(step.extracted_text);
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        rec
    })
}
