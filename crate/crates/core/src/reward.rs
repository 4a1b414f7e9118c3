//! Transition reward matrix built from verified one-step simplifications of
//! the dev split.
//!
//! Each dev sentence simplified across a transition scores +1 when the
//! estimator puts the output exactly at the target, +0.5 when it lands one
//! level away, and -1 otherwise. A cell's score is the mean over its
//! sentences; the matrix is then min-max normalized to [0, 1] over the
//! populated cells.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabeledSentence;
use crate::levels::{level_distance, ProficiencyLevel, Transition};
use crate::validation::{validate_transition, OneStepContext, ValidationRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("matrix is already normalized")]
    AlreadyNormalized,
    #[error("matrix has no cell with samples")]
    EmptyMatrix,
}

pub fn per_sentence_reward(achieved: ProficiencyLevel, target: ProficiencyLevel) -> f64 {
    match level_distance(achieved, target) {
        0 => 1.0,
        1 => 0.5,
        _ => -1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean_score: f64,
    /// Mean of the per-sentence rewards before normalization.
    pub raw_mean_score: f64,
    pub sample_count: usize,
    pub exact_count: usize,
    pub adjacent_count: usize,
    pub miss_count: usize,
}

impl CellStats {
    pub fn empty() -> Self {
        Self {
            mean_score: 0.0,
            raw_mean_score: 0.0,
            sample_count: 0,
            exact_count: 0,
            adjacent_count: 0,
            miss_count: 0,
        }
    }

    pub fn from_outcomes(outcomes: impl IntoIterator<Item = (ProficiencyLevel, ProficiencyLevel)>) -> Self {
        let mut c = Self::empty();
        for (achieved, target) in outcomes {
            match level_distance(achieved, target) {
                0 => c.exact_count += 1,
                1 => c.adjacent_count += 1,
                _ => c.miss_count += 1,
            }
            c.sample_count += 1;
        }
        if c.sample_count > 0 {
            let total = c.exact_count as f64 + 0.5 * c.adjacent_count as f64 - c.miss_count as f64;
            c.raw_mean_score = total / c.sample_count as f64;
            c.mean_score = c.raw_mean_score;
        }
        c
    }

    /// No sample reached this cell; after normalization it scores 0.0.
    pub fn is_empty(&self) -> bool {
        self.sample_count == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardMatrix {
    pub cells: BTreeMap<Transition, CellStats>,
    pub normalized: bool,
}

#[derive(Serialize, Deserialize)]
struct CellRow {
    source: ProficiencyLevel,
    target: ProficiencyLevel,
    #[serde(flatten)]
    stats: CellStats,
}

#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    normalized: bool,
    cells: Vec<CellRow>,
}

impl Serialize for RewardMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MatrixDoc {
            normalized: self.normalized,
            cells: self
                .cells
                .iter()
                .rev()
                .map(|(t, c)| CellRow {
                    source: t.source(),
                    target: t.target(),
                    stats: c.clone(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RewardMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = MatrixDoc::deserialize(d)?;
        let mut cells = BTreeMap::new();
        for row in doc.cells {
            let t = Transition::new(row.source, row.target).map_err(serde::de::Error::custom)?;
            let c = &row.stats;
            if c.exact_count + c.adjacent_count + c.miss_count != c.sample_count {
                return Err(serde::de::Error::custom(format!(
                    "cell {t}: outcome counts do not sum to sample_count"
                )));
            }
            if doc.normalized && !(0.0..=1.0).contains(&c.mean_score) {
                return Err(serde::de::Error::custom(format!(
                    "cell {t}: normalized score outside [0, 1]"
                )));
            }
            if cells.insert(t, row.stats).is_some() {
                return Err(serde::de::Error::custom(format!("duplicate cell {t}")));
            }
        }
        Ok(RewardMatrix {
            cells,
            normalized: doc.normalized,
        })
    }
}

impl RewardMatrix {
    /// A normalized matrix with the given scores, one notional exact sample
    /// per cell. Handy for planning experiments.
    pub fn from_normalized_scores(scores: impl IntoIterator<Item = (Transition, f64)>) -> Self {
        let cells = scores
            .into_iter()
            .map(|(t, s)| {
                (
                    t,
                    CellStats {
                        mean_score: s,
                        raw_mean_score: s,
                        sample_count: 1,
                        exact_count: 1,
                        adjacent_count: 0,
                        miss_count: 0,
                    },
                )
            })
            .collect();
        Self {
            cells,
            normalized: true,
        }
    }

    pub fn cell(&self, t: Transition) -> Option<&CellStats> {
        self.cells.get(&t)
    }

    /// Score used for planning; absent cells count as empty.
    pub fn score(&self, t: Transition) -> (f64, bool) {
        match self.cells.get(&t) {
            Some(c) => (c.mean_score, c.is_empty()),
            None => (0.0, true),
        }
    }

    pub fn empty_cells(&self) -> Vec<Transition> {
        self.cells
            .iter()
            .filter(|(_, c)| c.is_empty())
            .map(|(t, _)| *t)
            .collect()
    }

    /// Global min-max over populated cells. A constant matrix maps to 0.5
    /// everywhere; empty cells get 0.0.
    pub fn normalize(&self) -> Result<RewardMatrix, RewardError> {
        if self.normalized {
            return Err(RewardError::AlreadyNormalized);
        }
        let populated = self.cells.values().filter(|c| !c.is_empty()).map(|c| c.mean_score);
        let (min, max) = populated.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        if min > max {
            return Err(RewardError::EmptyMatrix);
        }
        let cells = self
            .cells
            .iter()
            .map(|(t, c)| {
                let mean_score = if c.is_empty() {
                    0.0
                } else if max == min {
                    0.5
                } else {
                    (c.mean_score - min) / (max - min)
                };
                (
                    *t,
                    CellStats {
                        mean_score,
                        ..c.clone()
                    },
                )
            })
            .collect();
        Ok(RewardMatrix {
            cells,
            normalized: true,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("matrix serializes");
        s.push('\n');
        s
    }

    pub fn from_json(raw: &str) -> serde_json::Result<Self> {
        serde_json::from_str(raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardBuild {
    /// Unnormalized.
    pub matrix: RewardMatrix,
    /// Every one-step outcome, reusable for exemplar harvesting.
    pub records: Vec<ValidationRecord>,
    /// Cells that ended with no samples, with the reason.
    pub empty: Vec<(Transition, String)>,
}

/// Fills one cell per transition from one-step simplifications of the dev
/// sentences at its source level.
pub fn build_reward_matrix(
    dev: &[LabeledSentence],
    transitions: &[Transition],
    ctx: &OneStepContext<'_>,
    sample_cap: Option<usize>,
) -> RewardBuild {
    let mut cells = BTreeMap::new();
    let mut records = Vec::new();
    let mut empty = Vec::new();
    for &t in transitions {
        let recs = validate_transition(dev, t, sample_cap, ctx);
        let stats = CellStats::from_outcomes(recs.iter().filter_map(|r| r.achieved.map(|a| (a, t.target()))));
        if stats.is_empty() {
            let reason = if recs.is_empty() {
                format!("no dev sentence at {}", t.source())
            } else {
                let first = recs.iter().find_map(|r| r.error.clone()).unwrap_or_default();
                format!("all {} calls failed; first error: {first}", recs.len())
            };
            empty.push((t, reason));
        }
        cells.insert(t, stats);
        records.extend(recs);
    }
    RewardBuild {
        matrix: RewardMatrix {
            cells,
            normalized: false,
        },
        records,
        empty,
    }
}
