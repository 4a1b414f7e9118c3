//! Step-by-step simplification of single sentences along a level path,
//! and batch execution of one configuration of the ablation grid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Backends, ChatMessage, GenerationProfile, GenerationRequest, Generator};
use crate::corpus::LabeledSentence;
use crate::exemplars::{fallback_exemplars, ExemplarError, ExemplarSet, ExemplarStore};
use crate::levels::{level_distance, LevelPath, ProficiencyLevel, Transition};
use crate::par::Parallelism;
use crate::planner::{plan, PlanObjective};
use crate::reward::RewardMatrix;

mod extract;
mod prompt;

pub use extract::{extract_output, strip_quotes, ExtractionConfig};
pub use prompt::{build_step_prompt, default_descriptors, render, PromptConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CascadeError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no descriptor configured for level {0}")]
    MissingDescriptor(ProficiencyLevel),
    #[error("model returned no usable text")]
    EmptyResponse,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Exemplars(#[from] ExemplarError),
}

/// Conversation carried through one cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversationState {
    /// Completed steps as (user, assistant) message pairs, append-only.
    pub turns: Vec<ChatMessage>,
    pub current_text: String,
    pub current_level_nominal: ProficiencyLevel,
    pub path: LevelPath,
    pub step_index: usize,
}

impl ConversationState {
    pub fn new(text: impl Into<String>, path: LevelPath) -> Self {
        Self {
            turns: Vec::new(),
            current_text: text.into(),
            current_level_nominal: path.source(),
            path,
            step_index: 0,
        }
    }

    pub fn is_done(&self) -> bool {
        self.step_index >= self.path.step_count()
    }

    pub fn next_transition(&self) -> Option<Transition> {
        self.path.transitions().nth(self.step_index)
    }

    /// Records a finished step; the extracted text becomes the next input.
    pub fn advance(&mut self, user: ChatMessage, raw_response: String, extracted: String) {
        self.turns.push(user);
        self.turns.push(ChatMessage::assistant(raw_response));
        self.current_text = extracted;
        self.step_index += 1;
        self.current_level_nominal = self.path.levels()[self.step_index.min(self.path.step_count())];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub transition: Transition,
    pub prompt_message_count: usize,
    pub raw_response: String,
    pub extracted_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate_level: Option<ProficiencyLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeResult {
    pub input_id: String,
    pub source_text: String,
    pub source_level: ProficiencyLevel,
    pub target_level: ProficiencyLevel,
    pub achieved_level: ProficiencyLevel,
    pub path: LevelPath,
    pub final_text: String,
    pub steps: Vec<StepTrace>,
    pub exact_match: bool,
    pub adjacent_match: bool,
}

/// A cascade that stopped early, with the steps it completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeFailure {
    pub input_id: String,
    pub source_level: ProficiencyLevel,
    pub target_level: ProficiencyLevel,
    pub error: String,
    pub completed_steps: Vec<StepTrace>,
}

fn generate_and_extract(
    generator: &dyn Generator,
    request: &GenerationRequest,
    config: &PromptConfig,
) -> Result<(String, String), CascadeError> {
    let mut last = CascadeError::EmptyResponse;
    for _ in 0..=config.empty_response_retries {
        let raw = generator.generate(request)?;
        match extract_output(&raw, &config.extraction) {
            Ok(text) => return Ok((raw, text)),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// One generation call simplifying `text` straight across `transition`,
/// with no history.
pub fn simplify_once(
    text: &str,
    transition: Transition,
    exemplars: Option<&ExemplarSet>,
    config: &PromptConfig,
    profile: &GenerationProfile,
    generator: &dyn Generator,
) -> Result<StepTrace, CascadeError> {
    let path = LevelPath::direct(transition.source(), transition.target())
        .map_err(|e| CascadeError::Precondition(e.to_string()))?;
    let state = ConversationState::new(text, path);
    let messages = build_step_prompt(&state, transition, exemplars, config)?;
    let count = messages.len();
    let request = GenerationRequest::new(messages, profile);
    let (raw, extracted) = generate_and_extract(generator, &request, config)?;
    Ok(StepTrace {
        transition,
        prompt_message_count: count,
        raw_response: raw,
        extracted_text: extracted,
        intermediate_level: None,
    })
}

/// Where each step's few-shot examples come from.
#[derive(Debug, Clone, Copy)]
pub enum ExemplarSource<'a> {
    /// The harvested store; transitions it lacks fall back to the first
    /// `store.k` training sentences at the target.
    Semantic {
        store: &'a ExemplarStore,
        train: &'a [LabeledSentence],
    },
    /// Training sentences at the target level only.
    SingleCase { train: &'a [LabeledSentence], count: usize },
}

impl ExemplarSource<'_> {
    pub fn resolve(&self, transition: Transition) -> Result<ExemplarSet, ExemplarError> {
        match *self {
            ExemplarSource::Semantic { store, train } => match store.get(transition) {
                Some(set) => Ok(set.clone()),
                None => fallback_exemplars(train, transition, store.k.max(1)),
            },
            ExemplarSource::SingleCase { train, count } => fallback_exemplars(train, transition, count.max(1)),
        }
    }
}

#[derive(Clone, Copy)]
pub struct CascadeContext<'a> {
    pub backends: &'a Backends,
    pub prompt: &'a PromptConfig,
    pub profile: &'a GenerationProfile,
    pub exemplars: ExemplarSource<'a>,
}

/// Walks `plan` from the sentence's level to `target`, feeding each step's
/// output into the next, then verifies the final text.
pub fn run_cascade(
    sentence: &LabeledSentence,
    target: ProficiencyLevel,
    plan: &LevelPath,
    ctx: &CascadeContext<'_>,
) -> Result<CascadeResult, CascadeFailure> {
    let mut steps = Vec::with_capacity(plan.step_count());
    let fail = |error: CascadeError, steps: Vec<StepTrace>| CascadeFailure {
        input_id: sentence.id.clone(),
        source_level: sentence.level,
        target_level: target,
        error: error.to_string(),
        completed_steps: steps,
    };
    if plan.source() != sentence.level || plan.target() != target {
        let msg = format!(
            "plan {plan} does not run from the sentence level {} to the target {target}",
            sentence.level
        );
        return Err(fail(CascadeError::Precondition(msg), steps));
    }

    let mut state = ConversationState::new(sentence.text.clone(), plan.clone());
    while let Some(transition) = state.next_transition() {
        let outcome = (|| -> Result<(ChatMessage, StepTrace), CascadeError> {
            let exemplars = ctx.exemplars.resolve(transition)?;
            let messages = build_step_prompt(&state, transition, Some(&exemplars), ctx.prompt)?;
            let user = messages.last().expect("prompt ends with a user turn").clone();
            let count = messages.len();
            let request = GenerationRequest::new(messages, ctx.profile);
            let (raw, extracted) = generate_and_extract(ctx.backends.generator.as_ref(), &request, ctx.prompt)?;
            let intermediate_level = if ctx.prompt.log_intermediate_verdicts {
                Some(
                    ctx.backends
                        .estimator
                        .estimate_level(&extracted, &sentence.language)?
                        .level,
                )
            } else {
                None
            };
            Ok((
                user,
                StepTrace {
                    transition,
                    prompt_message_count: count,
                    raw_response: raw,
                    extracted_text: extracted,
                    intermediate_level,
                },
            ))
        })();
        match outcome {
            Ok((user, trace)) => {
                state.advance(user, trace.raw_response.clone(), trace.extracted_text.clone());
                steps.push(trace);
            }
            Err(e) => return Err(fail(e, steps)),
        }
    }

    let verdict = match ctx
        .backends
        .estimator
        .estimate_level(&state.current_text, &sentence.language)
    {
        Ok(v) => v,
        Err(e) => return Err(fail(e.into(), steps)),
    };
    let achieved = verdict.level;
    Ok(CascadeResult {
        input_id: sentence.id.clone(),
        source_text: sentence.text.clone(),
        source_level: sentence.level,
        target_level: target,
        achieved_level: achieved,
        path: plan.clone(),
        final_text: state.current_text,
        steps,
        exact_match: achieved == target,
        adjacent_match: level_distance(achieved, target) <= 1,
    })
}

/// The three switches of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigFlags {
    pub planning: bool,
    pub semantic: bool,
    pub history: bool,
}

impl ConfigFlags {
    pub const FULL: ConfigFlags = ConfigFlags {
        planning: true,
        semantic: true,
        history: true,
    };
    pub const ONE_STEP: ConfigFlags = ConfigFlags {
        planning: false,
        semantic: false,
        history: false,
    };

    /// `Y+N+Y` style label, in planning/semantic/history order.
    pub fn label(&self) -> String {
        let yn = |b: bool| if b { "Y" } else { "N" };
        format!("{}+{}+{}", yn(self.planning), yn(self.semantic), yn(self.history))
    }

    pub fn parse(label: &str) -> Option<Self> {
        let parts: Vec<bool> = label
            .split('+')
            .map(|p| match p.trim() {
                "Y" | "y" => Some(true),
                "N" | "n" => Some(false),
                _ => None,
            })
            .collect::<Option<_>>()?;
        match parts.as_slice() {
            [planning, semantic, history] => Some(Self {
                planning: *planning,
                semantic: *semantic,
                history: *history,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("planning is enabled but no reward matrix was supplied")]
    MissingMatrix,
    #[error("semantic exemplars are enabled but no exemplar store was supplied")]
    MissingStore,
    #[error(transparent)]
    Prompt(#[from] CascadeError),
}

#[derive(Debug, Clone, Copy)]
pub struct RunInputs<'a> {
    pub test: &'a [LabeledSentence],
    pub targets: &'a [ProficiencyLevel],
    pub train: &'a [LabeledSentence],
    pub matrix: Option<&'a RewardMatrix>,
    pub store: Option<&'a ExemplarStore>,
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub flags: ConfigFlags,
    pub prompt: PromptConfig,
    pub profile: GenerationProfile,
    pub objective: PlanObjective,
    pub parallelism: Parallelism,
    /// Run semantic mode without a store, using training fallbacks only.
    pub allow_store_fallback: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            flags: ConfigFlags::FULL,
            prompt: PromptConfig::default(),
            profile: GenerationProfile::default(),
            objective: PlanObjective::default(),
            parallelism: Parallelism::default(),
            allow_store_fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutput {
    pub results: Vec<CascadeResult>,
    pub failures: Vec<CascadeFailure>,
    /// (sentence, target) pairs whose target was not below the source.
    pub skipped: usize,
}

impl RunOutput {
    pub fn attempted(&self) -> usize {
        self.results.len() + self.failures.len()
    }

    pub fn failure_rate(&self) -> f64 {
        match self.attempted() {
            0 => 0.0,
            n => self.failures.len() as f64 / n as f64,
        }
    }

    pub fn generation_steps(&self) -> usize {
        self.results.iter().map(|r| r.steps.len()).sum()
    }
}

/// Runs every (sentence, target) cascade of one grid configuration.
///
/// Planning selects DP paths from the matrix (otherwise one direct step);
/// semantic selects the harvested store (otherwise single-case training
/// examples); history controls whether earlier turns are resent. Results
/// keep sentence-major, target-minor order.
pub fn run_configuration(
    inputs: RunInputs<'_>,
    settings: &RunSettings,
    backends: &Backends,
) -> Result<RunOutput, RunError> {
    let flags = settings.flags;
    let mut prompt = settings.prompt.clone();
    prompt.include_history = flags.history;
    prompt.include_semantic_exemplars = flags.semantic;
    prompt.check_descriptors()?;

    let matrix = match (flags.planning, inputs.matrix) {
        (true, None) => return Err(RunError::MissingMatrix),
        (true, Some(m)) => Some(m),
        (false, _) => None,
    };
    let empty_store;
    let exemplars = if flags.semantic {
        let store = match inputs.store {
            Some(s) => s,
            None if settings.allow_store_fallback => {
                empty_store = ExemplarStore {
                    k: 3,
                    sets: BTreeMap::new(),
                };
                &empty_store
            }
            None => return Err(RunError::MissingStore),
        };
        ExemplarSource::Semantic {
            store,
            train: inputs.train,
        }
    } else {
        ExemplarSource::SingleCase {
            train: inputs.train,
            count: prompt.single_case_count,
        }
    };

    let mut work = Vec::new();
    let mut skipped = 0;
    for s in inputs.test {
        for &t in inputs.targets {
            if t < s.level {
                work.push((s, t));
            } else {
                skipped += 1;
            }
        }
    }

    let mut paths: BTreeMap<(ProficiencyLevel, ProficiencyLevel), Result<LevelPath, String>> = BTreeMap::new();
    for &(s, t) in &work {
        paths.entry((s.level, t)).or_insert_with(|| match matrix {
            Some(m) => plan(m, s.level, t, settings.objective)
                .map(|p| p.path)
                .map_err(|e| e.to_string()),
            None => LevelPath::direct(s.level, t).map_err(|e| e.to_string()),
        });
    }

    let ctx = CascadeContext {
        backends,
        prompt: &prompt,
        profile: &settings.profile,
        exemplars,
    };
    let outcomes = settings.parallelism.map(&work, |&(s, t)| match &paths[&(s.level, t)] {
        Ok(path) => run_cascade(s, t, path, &ctx),
        Err(e) => Err(CascadeFailure {
            input_id: s.id.clone(),
            source_level: s.level,
            target_level: t,
            error: format!("planning failed: {e}"),
            completed_steps: Vec::new(),
        }),
    });

    let mut out = RunOutput {
        skipped,
        ..Default::default()
    };
    for o in outcomes {
        match o {
            Ok(r) => out.results.push(r),
            Err(f) => out.failures.push(f),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_labels() {
        assert_eq!(ConfigFlags::FULL.label(), "Y+Y+Y");
        assert_eq!(ConfigFlags::ONE_STEP.label(), "N+N+N");
        assert_eq!(ConfigFlags::parse("Y+N+Y").unwrap().label(), "Y+N+Y");
        assert!(ConfigFlags::parse("Y+N").is_none());
        assert!(ConfigFlags::parse("Y+X+N").is_none());
    }

    #[test]
    fn state_advances_along_path() {
        use ProficiencyLevel::*;
        let mut s = ConversationState::new("x y z", LevelPath::new(vec![C2, B2, A1]).unwrap());
        assert_eq!(s.next_transition(), Some(Transition::new(C2, B2).unwrap()));
        s.advance(ChatMessage::user("u"), "r".into(), "x y.".into());
        assert_eq!(s.current_level_nominal, B2);
        assert_eq!(s.current_text, "x y.");
        assert_eq!(s.turns.len(), 2);
        s.advance(ChatMessage::user("u"), "r".into(), "x.".into());
        assert!(s.is_done());
        assert_eq!(s.current_level_nominal, A1);
        assert_eq!(s.next_transition(), None);
    }
}
