use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::extract::ExtractionConfig;
use super::{CascadeError, ConversationState};
use crate::backends::ChatMessage;
use crate::exemplars::{ExemplarSet, Provenance};
use crate::levels::{ProficiencyLevel, Transition};

/// Prompt templates and switches for one run.
///
/// Placeholders are written `{name}`; unknown names are left as-is.
///
/// - system: `{target_level}`, `{descriptor}`
/// - user: `{exemplars}`, `{source_level}`, `{target_level}`, `{text}`
/// - pair exemplar: `{index}`, `{source_level}`, `{target_level}`, `{source}`, `{simplified}`
/// - single exemplar: `{index}`, `{target_level}`, `{text}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub system_instruction_template: String,
    pub user_template: String,
    pub exemplar_block_template: String,
    pub single_exemplar_template: String,
    pub descriptor_catalog: BTreeMap<ProficiencyLevel, String>,
    pub include_history: bool,
    pub include_semantic_exemplars: bool,
    /// When false, system and user text are merged into one user message
    /// and history is never sent.
    pub use_chat_template: bool,
    /// Training sentences shown in single-case mode.
    pub single_case_count: usize,
    pub empty_response_retries: u32,
    pub log_intermediate_verdicts: bool,
    pub extraction: ExtractionConfig,
}

pub fn default_descriptors() -> BTreeMap<ProficiencyLevel, String> {
    use ProficiencyLevel::*;
    [
        (A1, "Very short, simple sentences built from basic everyday words about familiar, concrete things."),
        (A2, "Short sentences with frequent vocabulary about routine matters, people, places and immediate needs."),
        (B1, "Clear, straightforward sentences on familiar topics, joined with simple linking words and mostly common vocabulary."),
        (B2, "Detailed sentences that may contain some complex structures and a moderately wide, partly specialised vocabulary."),
        (C1, "Well-organised complex sentences with a broad vocabulary, including idiomatic, abstract and implicit meaning."),
        (C2, "Highly sophisticated sentences with precise, nuanced and specialised vocabulary and intricate structure."),
    ]
    .into_iter()
    .map(|(l, d)| (l, d.to_string()))
    .collect()
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            system_instruction_template: "You simplify sentences for language learners. Rewrite the sentence you are given so that it matches CEFR level {target_level}.\nLevel {target_level}: {descriptor}\nKeep the original meaning as far as possible.".into(),
            user_template: "{exemplars}Simplify the following sentence from CEFR level {source_level} to CEFR level {target_level}. Reply with the simplified sentence only.\nSentence: {text}".into(),
            exemplar_block_template: "Example {index}:\nOriginal ({source_level}): {source}\nSimplified ({target_level}): {simplified}".into(),
            single_exemplar_template: "Example {index} (level {target_level}): {text}".into(),
            descriptor_catalog: default_descriptors(),
            include_history: true,
            include_semantic_exemplars: true,
            use_chat_template: true,
            single_case_count: 1,
            empty_response_retries: 1,
            log_intermediate_verdicts: false,
            extraction: ExtractionConfig::default(),
        }
    }
}

impl PromptConfig {
    pub fn check_descriptors(&self) -> Result<(), CascadeError> {
        match ProficiencyLevel::ALL
            .iter()
            .find(|l| !self.descriptor_catalog.contains_key(l))
        {
            Some(l) => Err(CascadeError::MissingDescriptor(*l)),
            None => Ok(()),
        }
    }
}

/// Single-pass `{key}` substitution; values are never re-scanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let key = &after[..close];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(key);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn exemplar_block(set: &ExemplarSet, config: &PromptConfig) -> String {
    let as_pairs = set.provenance == Provenance::Harvested && config.include_semantic_exemplars;
    set.pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let index = (i + 1).to_string();
            if as_pairs {
                render(
                    &config.exemplar_block_template,
                    &[
                        ("index", &index),
                        ("source_level", p.source_level.symbol()),
                        ("target_level", p.achieved_level.symbol()),
                        ("source", &p.source_text),
                        ("simplified", &p.simplified_text),
                    ],
                )
            } else {
                render(
                    &config.single_exemplar_template,
                    &[
                        ("index", &index),
                        ("target_level", p.achieved_level.symbol()),
                        ("text", &p.simplified_text),
                    ],
                )
            }
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// The user turn for one step, without any surrounding history.
pub(crate) fn user_turn(
    state: &ConversationState,
    transition: Transition,
    exemplars: Option<&ExemplarSet>,
    config: &PromptConfig,
) -> String {
    let block = match exemplars {
        Some(set) if !set.pairs.is_empty() => format!("{}\n\n", exemplar_block(set, config)),
        _ => String::new(),
    };
    render(
        &config.user_template,
        &[
            ("exemplars", &block),
            ("source_level", transition.source().symbol()),
            ("target_level", transition.target().symbol()),
            ("text", &state.current_text),
        ],
    )
}

/// Messages for the next step: system instruction, prior turns when
/// history is on, then the user turn with exemplars and the current text.
pub fn build_step_prompt(
    state: &ConversationState,
    transition: Transition,
    exemplars: Option<&ExemplarSet>,
    config: &PromptConfig,
) -> Result<Vec<ChatMessage>, CascadeError> {
    if transition.source() != state.current_level_nominal {
        return Err(CascadeError::Precondition(format!(
            "transition {transition} does not start at the current level {}",
            state.current_level_nominal
        )));
    }
    let descriptor = config
        .descriptor_catalog
        .get(&transition.target())
        .ok_or(CascadeError::MissingDescriptor(transition.target()))?;
    let system = render(
        &config.system_instruction_template,
        &[
            ("target_level", transition.target().symbol()),
            ("descriptor", descriptor),
        ],
    );
    let user = user_turn(state, transition, exemplars, config);

    if !config.use_chat_template {
        return Ok(vec![ChatMessage::user(format!("{system}\n\n{user}"))]);
    }
    let mut messages = Vec::with_capacity(2 + state.turns.len());
    messages.push(ChatMessage::system(system));
    if config.include_history {
        messages.extend(state.turns.iter().cloned());
    }
    messages.push(ChatMessage::user(user));
    Ok(messages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::Role;
    use crate::exemplars::ExemplarPair;
    use crate::levels::LevelPath;
    use ProficiencyLevel::*;

    #[test]
    fn render_is_single_pass() {
        assert_eq!(render("a {x} b {y}", &[("x", "{y}"), ("y", "Y")]), "a {y} b Y");
        assert_eq!(render("{unknown} {", &[]), "{unknown} {");
    }

    fn state() -> ConversationState {
        ConversationState::new("one two three", LevelPath::new(vec![C2, B2, B1]).unwrap())
    }

    #[test]
    fn first_step_has_two_messages() {
        let s = state();
        let t = Transition::new(C2, B2).unwrap();
        let m = build_step_prompt(&s, t, None, &PromptConfig::default()).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].role, Role::System);
        assert!(m[0].content.contains("CEFR level B2"));
        assert!(m[1].content.ends_with("Sentence: one two three"));
    }

    #[test]
    fn history_grows_by_two_per_step() {
        let mut s = state();
        let cfg = PromptConfig::default();
        let t1 = Transition::new(C2, B2).unwrap();
        let m1 = build_step_prompt(&s, t1, None, &cfg).unwrap();
        s.advance(m1.last().unwrap().clone(), "one two.".into(), "one two.".into());
        let t2 = Transition::new(B2, B1).unwrap();
        let m2 = build_step_prompt(&s, t2, None, &cfg).unwrap();
        assert_eq!(m2.len(), 4);
        assert_eq!(m2[2].role, Role::Assistant);

        let no_hist = PromptConfig {
            include_history: false,
            ..cfg.clone()
        };
        assert_eq!(build_step_prompt(&s, t2, None, &no_hist).unwrap().len(), 2);

        let raw = PromptConfig {
            use_chat_template: false,
            ..cfg
        };
        let merged = build_step_prompt(&s, t2, None, &raw).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].role, Role::User);
    }

    #[test]
    fn wrong_source_and_missing_descriptor() {
        let s = state();
        let bad = Transition::new(B2, B1).unwrap();
        assert!(matches!(
            build_step_prompt(&s, bad, None, &PromptConfig::default()),
            Err(CascadeError::Precondition(_))
        ));
        let mut cfg = PromptConfig::default();
        cfg.descriptor_catalog.remove(&B2);
        assert_eq!(
            build_step_prompt(&s, Transition::new(C2, B2).unwrap(), None, &cfg),
            Err(CascadeError::MissingDescriptor(B2))
        );
        assert_eq!(cfg.check_descriptors(), Err(CascadeError::MissingDescriptor(B2)));
    }

    #[test]
    fn exemplar_rendering_follows_provenance() {
        let t = Transition::new(C2, B2).unwrap();
        let pair = ExemplarPair {
            source_text: "long original".into(),
            simplified_text: "short".into(),
            source_level: C2,
            achieved_level: B2,
            similarity: Some(0.5),
        };
        let mut set = ExemplarSet {
            transition: t,
            provenance: Provenance::Harvested,
            pairs: vec![pair],
        };
        let cfg = PromptConfig::default();
        let m = build_step_prompt(&state(), t, Some(&set), &cfg).unwrap();
        assert!(m[1]
            .content
            .starts_with("Example 1:\nOriginal (C2): long original\nSimplified (B2): short\n\n"));

        set.provenance = Provenance::FallbackSingleSentences;
        let m = build_step_prompt(&state(), t, Some(&set), &cfg).unwrap();
        assert!(m[1].content.starts_with("Example 1 (level B2): short\n\n"));
    }
}
