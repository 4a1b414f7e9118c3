//! Few-shot exemplars per transition: harvested from verified one-step
//! simplifications of the dev split, ranked by how much meaning they keep,
//! with single training sentences as the fallback.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, SimilarityBackend};
use crate::corpus::LabeledSentence;
use crate::levels::{ProficiencyLevel, Transition};
use crate::validation::{validate_transition, OneStepContext, ValidationRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExemplarError {
    #[error("no training sentence at level {0} to fall back on")]
    NoFallbackAvailable(ProficiencyLevel),
    #[error("similarity backend failed: {0}")]
    Similarity(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarPair {
    /// Empty for single-sentence (fallback) exemplars.
    pub source_text: String,
    pub simplified_text: String,
    pub source_level: ProficiencyLevel,
    pub achieved_level: ProficiencyLevel,
    #[serde(default)]
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Harvested,
    FallbackSingleSentences,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub transition: Transition,
    pub provenance: Provenance,
    pub pairs: Vec<ExemplarPair>,
}

/// Keeps the dev simplifications whose verified level equals the target
/// exactly. Similarity is left unset.
pub fn harvest_from_records(records: &[ValidationRecord], transition: Transition) -> Vec<ExemplarPair> {
    records
        .iter()
        .filter(|r| r.transition == transition)
        .filter_map(|r| match (&r.output, r.achieved) {
            (Some(out), Some(achieved)) if achieved == transition.target() => Some(ExemplarPair {
                source_text: r.source_text.clone(),
                simplified_text: out.clone(),
                source_level: transition.source(),
                achieved_level: achieved,
                similarity: None,
            }),
            _ => None,
        })
        .collect()
}

/// Result of harvesting one transition; per-sentence failures do not stop
/// the harvest.
#[derive(Debug, Clone, PartialEq)]
pub struct Harvest {
    pub pairs: Vec<ExemplarPair>,
    pub records: Vec<ValidationRecord>,
}

impl Harvest {
    pub fn failures(&self) -> impl Iterator<Item = &ValidationRecord> {
        self.records.iter().filter(|r| r.error.is_some())
    }
}

pub fn harvest_pairs(dev: &[LabeledSentence], transition: Transition, ctx: &OneStepContext<'_>) -> Harvest {
    let records = validate_transition(dev, transition, None, ctx);
    Harvest {
        pairs: harvest_from_records(&records, transition),
        records,
    }
}

/// Scores every candidate and keeps the top `k` by similarity; ties keep
/// candidate order. Fewer than `k` candidates are all kept.
pub fn select_exemplars(
    transition: Transition,
    candidates: &[ExemplarPair],
    k: usize,
    similarity: &dyn SimilarityBackend,
) -> Result<ExemplarSet, ExemplarError> {
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let s = similarity.similarity(&c.source_text, &c.simplified_text)?;
        scored.push(ExemplarPair {
            similarity: Some(s),
            ..c.clone()
        });
    }
    // stable: equal scores stay in candidate order
    scored.sort_by(|a, b| {
        let (a, b) = (a.similarity.unwrap_or(f64::MIN), b.similarity.unwrap_or(f64::MIN));
        b.total_cmp(&a)
    });
    scored.truncate(k);
    Ok(ExemplarSet {
        transition,
        provenance: Provenance::Harvested,
        pairs: scored,
    })
}

/// The first `k` training sentences at the transition target, in corpus
/// order, as single-sentence exemplars.
pub fn fallback_exemplars(
    train: &[LabeledSentence],
    transition: Transition,
    k: usize,
) -> Result<ExemplarSet, ExemplarError> {
    let target = transition.target();
    let pairs: Vec<ExemplarPair> = train
        .iter()
        .filter(|s| s.level == target)
        .take(k)
        .map(|s| ExemplarPair {
            source_text: String::new(),
            simplified_text: s.text.clone(),
            source_level: transition.source(),
            achieved_level: target,
            similarity: None,
        })
        .collect();
    if pairs.is_empty() {
        return Err(ExemplarError::NoFallbackAvailable(target));
    }
    Ok(ExemplarSet {
        transition,
        provenance: Provenance::FallbackSingleSentences,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarStore {
    pub k: usize,
    #[serde(with = "sets_as_list")]
    pub sets: BTreeMap<Transition, ExemplarSet>,
}

mod sets_as_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<Transition, ExemplarSet>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.values().rev())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Transition, ExemplarSet>, D::Error> {
        let v = Vec::<ExemplarSet>::deserialize(d)?;
        Ok(v.into_iter().map(|s| (s.transition, s)).collect())
    }
}

impl ExemplarStore {
    pub fn get(&self, transition: Transition) -> Option<&ExemplarSet> {
        self.sets.get(&transition)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("store serializes");
        s.push('\n');
        s
    }

    pub fn from_json(raw: &str) -> serde_json::Result<Self> {
        serde_json::from_str(raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub transition: Transition,
    pub candidates: usize,
    pub selected: usize,
    pub provenance: Option<Provenance>,
    pub sentence_failures: Vec<String>,
    pub fatal: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreBuild {
    pub store: ExemplarStore,
    pub report: Vec<TransitionReport>,
}

impl StoreBuild {
    pub fn fatal(&self) -> impl Iterator<Item = &TransitionReport> {
        self.report.iter().filter(|r| r.fatal.is_some())
    }
}

/// Harvests and selects exemplars for every transition, falling back to
/// training sentences when a harvest comes back empty.
///
/// `reuse` supplies dev generations made earlier for the same transitions
/// and prompt (typically during reward construction); transitions absent
/// from it are generated fresh.
pub fn exemplar_store_build(
    dev: &[LabeledSentence],
    transitions: &[Transition],
    ctx: &OneStepContext<'_>,
    similarity: &dyn SimilarityBackend,
    k: usize,
    reuse: Option<&[ValidationRecord]>,
) -> StoreBuild {
    let mut wanted: Vec<Transition> = transitions.to_vec();
    wanted.sort_unstable_by(|a, b| b.cmp(a));
    wanted.dedup();

    let mut sets = BTreeMap::new();
    let mut report = Vec::new();
    for t in wanted {
        let reused = reuse.filter(|r| r.iter().any(|rec| rec.transition == t));
        let records = match reused {
            Some(r) => r.iter().filter(|rec| rec.transition == t).cloned().collect(),
            None => validate_transition(dev, t, None, ctx),
        };
        let candidates = harvest_from_records(&records, t);
        let sentence_failures: Vec<String> = records
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.sentence_id)))
            .collect();
        let mut entry = TransitionReport {
            transition: t,
            candidates: candidates.len(),
            selected: 0,
            provenance: None,
            sentence_failures,
            fatal: None,
        };
        let chosen = if candidates.is_empty() {
            fallback_exemplars(ctx.train, t, k)
        } else {
            select_exemplars(t, &candidates, k, similarity)
                .or_else(|e| fallback_exemplars(ctx.train, t, k).map_err(|f| combine(e, f)))
        };
        match chosen {
            Ok(set) => {
                entry.selected = set.pairs.len();
                entry.provenance = Some(set.provenance);
                sets.insert(t, set);
            }
            Err(e) => entry.fatal = Some(e.to_string()),
        }
        report.push(entry);
    }
    StoreBuild {
        store: ExemplarStore { k, sets },
        report,
    }
}

fn combine(first: ExemplarError, second: ExemplarError) -> ExemplarError {
    match (first, second) {
        (ExemplarError::Similarity(e), ExemplarError::NoFallbackAvailable(l)) => ExemplarError::Similarity(
            BackendError::Transport(format!("{e}; fallback: no training sentence at {l}")),
        ),
        (_, other) => other,
    }
}
