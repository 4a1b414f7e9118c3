//! Optimal simplification paths through the level DAG.
//!
//! `V(i, t)` is the best total reward of a `t`-step strictly descending
//! path from the source that ends at level `i`:
//!
//! ```text
//! V(source, 0) = 0
//! V(i, t)      = max over j above i of V(j, t - 1) + R(j, i)
//! ```
//!
//! Every step count up to the level gap is filled, the best terminal entry
//! at the target is chosen under the objective, and the path is recovered
//! by following back-pointers. Ties go to fewer steps, then to the path
//! whose earliest differing intermediate level is higher.
//!
//! The DP core works on plain ranks (`0..n`, higher rank = harder level) so
//! it can be exercised on taxonomies other than the six CEFR levels.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::levels::{LevelPath, ProficiencyLevel, Transition};
use crate::reward::RewardMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("cannot plan {from}->{target}: target must be strictly below source")]
    InvalidPair {
        from: ProficiencyLevel,
        target: ProficiencyLevel,
    },
    #[error("no feasible path {from}->{target} once empty cells are excluded")]
    InfeasiblePath {
        from: ProficiencyLevel,
        target: ProficiencyLevel,
    },
    #[error("planning requires a normalized reward matrix")]
    NotNormalized,
    #[error("no planned path for {from}->{target}")]
    MissingPlan {
        from: ProficiencyLevel,
        target: ProficiencyLevel,
    },
    #[error("no pairs to compare")]
    NoPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Sum of transition rewards along the path.
    TotalReward,
    /// Sum divided by the number of steps.
    #[default]
    MeanReward,
}

impl fmt::Display for ObjectiveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveMode::TotalReward => "total_reward",
            ObjectiveMode::MeanReward => "mean_reward",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlanObjective {
    pub mode: ObjectiveMode,
    /// Treat cells with no samples as missing edges.
    pub forbid_empty_cells: bool,
}

impl PlanObjective {
    pub fn mean() -> Self {
        Self::default()
    }

    pub fn total() -> Self {
        Self {
            mode: ObjectiveMode::TotalReward,
            forbid_empty_cells: false,
        }
    }

    fn value(&self, total: f64, steps: usize) -> f64 {
        match self.mode {
            ObjectiveMode::TotalReward => total,
            ObjectiveMode::MeanReward => total / steps as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpEntry {
    pub level: ProficiencyLevel,
    pub steps: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub source: ProficiencyLevel,
    pub target: ProficiencyLevel,
    pub path: LevelPath,
    pub objective_value: f64,
    pub objective_mode: ObjectiveMode,
    /// Filled `V(level, steps)` entries.
    #[serde(default)]
    pub dp_table: Vec<DpEntry>,
}

/// Path result on raw ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct RankPlan {
    /// Strictly decreasing ranks from source to target.
    pub path: Vec<usize>,
    pub objective_value: f64,
    /// `table[t][i]`: best total for `t` steps ending at rank `i`.
    pub table: Vec<Vec<Option<f64>>>,
}

/// Lexicographic preference: the first differing element decides, higher
/// rank wins.
fn prefer_higher(a: &[usize], b: &[usize]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

fn backtrack(back: &[Vec<Option<usize>>], end: usize, steps: usize) -> Vec<usize> {
    let mut path = vec![end];
    let mut node = end;
    for t in (1..=steps).rev() {
        node = back[t][node].expect("reachable entry has a predecessor");
        path.push(node);
    }
    path.reverse();
    path
}

/// DP over ranks. `reward(from, to)` returns `None` for unusable edges.
/// Returns `None` when no path exists.
pub fn plan_ranks(
    source: usize,
    target: usize,
    objective: &PlanObjective,
    reward: impl Fn(usize, usize) -> Option<f64>,
) -> Option<RankPlan> {
    assert!(target < source, "target rank must be below source rank");
    let gap = source - target;
    // value[t][i], back[t][i] for i in 0..=source
    let mut value: Vec<Vec<Option<f64>>> = vec![vec![None; source + 1]; gap + 1];
    let mut back: Vec<Vec<Option<usize>>> = vec![vec![None; source + 1]; gap + 1];
    value[0][source] = Some(0.0);

    for t in 1..=gap {
        for i in target..source {
            for j in (i + 1)..=source {
                let (Some(prev), Some(r)) = (value[t - 1][j], reward(j, i)) else {
                    continue;
                };
                let cand = prev + r;
                let replace = match value[t][i] {
                    None => true,
                    Some(cur) if cand > cur => true,
                    Some(cur) if cand == cur => {
                        let mut a = backtrack(&back, j, t - 1);
                        a.push(i);
                        let mut b = backtrack(&back, back[t][i].unwrap(), t - 1);
                        b.push(i);
                        prefer_higher(&a, &b) == Ordering::Greater
                    }
                    _ => false,
                };
                if replace {
                    value[t][i] = Some(cand);
                    back[t][i] = Some(j);
                }
            }
        }
    }

    let mut best: Option<(usize, f64)> = None;
    for (t, row) in value.iter().enumerate().skip(1) {
        if let Some(total) = row[target] {
            let v = objective.value(total, t);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
    }
    let (steps, objective_value) = best?;
    Some(RankPlan {
        path: backtrack(&back, target, steps),
        objective_value,
        table: value,
    })
}

fn rank(level: ProficiencyLevel) -> usize {
    usize::from(level.index() - 1)
}

fn level_at(rank: usize) -> ProficiencyLevel {
    ProficiencyLevel::ALL[rank]
}

fn edge_reward<'a>(matrix: &'a RewardMatrix, objective: &PlanObjective) -> impl Fn(usize, usize) -> Option<f64> + 'a {
    let forbid = objective.forbid_empty_cells;
    move |from, to| {
        let t = Transition::new(level_at(from), level_at(to)).ok()?;
        let (score, empty) = matrix.score(t);
        if empty && forbid {
            None
        } else {
            Some(score)
        }
    }
}

fn check_pair(matrix: &RewardMatrix, source: ProficiencyLevel, target: ProficiencyLevel) -> Result<(), PlanError> {
    if target >= source {
        return Err(PlanError::InvalidPair { from: source, target });
    }
    if !matrix.normalized {
        return Err(PlanError::NotNormalized);
    }
    Ok(())
}

/// Best path from `source` down to `target` under `objective`.
pub fn plan(
    matrix: &RewardMatrix,
    source: ProficiencyLevel,
    target: ProficiencyLevel,
    objective: PlanObjective,
) -> Result<PlanResult, PlanError> {
    check_pair(matrix, source, target)?;
    let rp = plan_ranks(rank(source), rank(target), &objective, edge_reward(matrix, &objective))
        .ok_or(PlanError::InfeasiblePath { from: source, target })?;
    let mut dp_table = Vec::new();
    for (steps, row) in rp.table.iter().enumerate().skip(1) {
        for (r, v) in row.iter().enumerate().rev() {
            if let Some(value) = v {
                dp_table.push(DpEntry {
                    level: level_at(r),
                    steps,
                    value: *value,
                });
            }
        }
    }
    Ok(PlanResult {
        source,
        target,
        path: LevelPath::new(rp.path.into_iter().map(level_at).collect()).expect("DP paths descend"),
        objective_value: rp.objective_value,
        objective_mode: objective.mode,
        dp_table,
    })
}

/// Every strictly descending path from `source` to `target`: one per subset
/// of the levels in between.
pub fn enumerate_paths(source: ProficiencyLevel, target: ProficiencyLevel) -> Vec<LevelPath> {
    if target >= source {
        return Vec::new();
    }
    let inner = source.between(target);
    (0u32..1 << inner.len())
        .map(|mask| {
            let mut levels = vec![source];
            levels.extend(
                inner
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, l)| *l),
            );
            levels.push(target);
            LevelPath::new(levels).expect("subset of intermediates descends")
        })
        .collect()
}

/// Scores a path left to right; `None` if it uses a forbidden edge.
pub fn path_objective(matrix: &RewardMatrix, path: &LevelPath, objective: &PlanObjective) -> Option<f64> {
    let reward = edge_reward(matrix, objective);
    let mut total = 0.0;
    for t in path.transitions() {
        total += reward(rank(t.source()), rank(t.target()))?;
    }
    Some(objective.value(total, path.step_count()))
}

/// Exhaustive oracle for [`plan`] with the same tie-breaks.
pub fn brute_force_plan(
    matrix: &RewardMatrix,
    source: ProficiencyLevel,
    target: ProficiencyLevel,
    objective: PlanObjective,
) -> Result<PlanResult, PlanError> {
    check_pair(matrix, source, target)?;
    let mut best: Option<(LevelPath, f64)> = None;
    for p in enumerate_paths(source, target) {
        let Some(v) = path_objective(matrix, &p, &objective) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((bp, bv)) => {
                v > *bv
                    || (v == *bv
                        && (p.step_count() < bp.step_count()
                            || (p.step_count() == bp.step_count()
                                && prefer_higher(
                                    &p.levels().iter().map(|l| l.index() as usize).collect::<Vec<_>>(),
                                    &bp.levels().iter().map(|l| l.index() as usize).collect::<Vec<_>>(),
                                ) == Ordering::Greater)))
            }
        };
        if better {
            best = Some((p, v));
        }
    }
    let (path, objective_value) = best.ok_or(PlanError::InfeasiblePath { from: source, target })?;
    Ok(PlanResult {
        source,
        target,
        path,
        objective_value,
        objective_mode: objective.mode,
        dp_table: Vec::new(),
    })
}

/// The path through every level between source and target.
pub fn sequential_path(source: ProficiencyLevel, target: ProficiencyLevel) -> Result<LevelPath, PlanError> {
    if target >= source {
        return Err(PlanError::InvalidPair { from: source, target });
    }
    let mut levels = vec![source];
    levels.extend(source.between(target));
    levels.push(target);
    Ok(LevelPath::new(levels).expect("sequential path descends"))
}

pub type LevelPair = (ProficiencyLevel, ProficiencyLevel);

/// Percentage fewer generation steps than the sequential baseline, summed
/// over `pairs`.
pub fn rris(pairs: &[LevelPair], planned: &BTreeMap<LevelPair, LevelPath>) -> Result<f64, PlanError> {
    Ok(rris_report(pairs, planned)?.rris_pct)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrisRow {
    pub source: ProficiencyLevel,
    pub target: ProficiencyLevel,
    pub dp_path: LevelPath,
    pub planned_steps: usize,
    pub sequential_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrisReport {
    pub rows: Vec<RrisRow>,
    pub planned_total: usize,
    pub sequential_total: usize,
    pub rris_pct: f64,
}

pub fn rris_report(pairs: &[LevelPair], planned: &BTreeMap<LevelPair, LevelPath>) -> Result<RrisReport, PlanError> {
    if pairs.is_empty() {
        return Err(PlanError::NoPairs);
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for &(source, target) in pairs {
        let path = planned
            .get(&(source, target))
            .ok_or(PlanError::MissingPlan { from: source, target })?;
        let seq = sequential_path(source, target)?;
        rows.push(RrisRow {
            source,
            target,
            dp_path: path.clone(),
            planned_steps: path.step_count(),
            sequential_steps: seq.step_count(),
        });
    }
    let planned_total: usize = rows.iter().map(|r| r.planned_steps).sum();
    let sequential_total: usize = rows.iter().map(|r| r.sequential_steps).sum();
    Ok(RrisReport {
        rows,
        planned_total,
        sequential_total,
        rris_pct: 100.0 * (1.0 - planned_total as f64 / sequential_total as f64),
    })
}

impl RrisReport {
    /// Aligned text table: source, target, path, then the overall figure.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<6} {:<6} {:<24} {:>5} {:>5}\n",
            "Source", "Target", "DP-Path", "Steps", "Seq"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<6} {:<6} {:<24} {:>5} {:>5}\n",
                r.source,
                r.target,
                r.dp_path.to_string(),
                r.planned_steps,
                r.sequential_steps
            ));
        }
        out.push_str(&format!(
            "RRIS {:.2}% ({} planned vs {} sequential steps)\n",
            self.rris_pct, self.planned_total, self.sequential_total
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levels::downward_transitions;
    use ProficiencyLevel::*;

    fn all_transitions() -> Vec<Transition> {
        downward_transitions(&ProficiencyLevel::ALL, A1)
    }

    fn uniform(v: f64) -> RewardMatrix {
        RewardMatrix::from_normalized_scores(all_transitions().into_iter().map(|t| (t, v)))
    }

    fn p(levels: &[ProficiencyLevel]) -> LevelPath {
        LevelPath::new(levels.to_vec()).unwrap()
    }

    /// Edges along C2 > B2 > B1 > A2 > A1 score 1.0; everything else 0.2.
    fn skip_c1_matrix() -> RewardMatrix {
        let good = [(C2, B2), (B2, B1), (B1, A2), (A2, A1)];
        RewardMatrix::from_normalized_scores(all_transitions().into_iter().map(|t| {
            let hi = good.contains(&(t.source(), t.target()));
            (t, if hi { 1.0 } else { 0.2 })
        }))
    }

    #[test]
    fn skips_c1_when_c1_cells_are_weak() {
        let m = skip_c1_matrix();
        let r = plan(&m, C2, A1, PlanObjective::mean()).unwrap();
        assert_eq!(r.path, p(&[C2, B2, B1, A2, A1]));
        assert_eq!(r.objective_value, 1.0);
        assert_eq!(
            path_objective(&m, &r.path, &PlanObjective::mean()),
            Some(r.objective_value)
        );
    }

    #[test]
    fn one_step_dominance() {
        let mut scores: Vec<_> = all_transitions().into_iter().map(|t| (t, 0.1)).collect();
        scores.push((Transition::new(B2, B1).unwrap(), 1.0));
        let m = RewardMatrix::from_normalized_scores(scores);
        assert_eq!(plan(&m, B2, B1, PlanObjective::mean()).unwrap().path, p(&[B2, B1]));
    }

    #[test]
    fn uniform_matrix_modes() {
        let m = uniform(0.5);
        let mean = plan(&m, C2, A1, PlanObjective::mean()).unwrap();
        assert_eq!(mean.path, p(&[C2, A1]));
        assert_eq!(mean.objective_value, 0.5);
        let total = plan(&m, C2, A1, PlanObjective::total()).unwrap();
        assert_eq!(total.path, sequential_path(C2, A1).unwrap());
        assert_eq!(total.objective_value, 2.5);
    }

    #[test]
    fn lexicographic_tie_break() {
        // all zero: total mode ties everywhere; fewer steps wins
        let m = uniform(0.0);
        assert_eq!(plan(&m, C2, A1, PlanObjective::total()).unwrap().path, p(&[C2, A1]));
        // two 2-step routes tie at 1.0 total: via C1 and via B1; C1 is higher
        let mut scores: Vec<_> = all_transitions().into_iter().map(|t| (t, 0.0)).collect();
        for (s, d) in [(C2, C1), (C1, A2), (C2, B1), (B1, A2)] {
            scores.push((Transition::new(s, d).unwrap(), 0.5));
        }
        let m = RewardMatrix::from_normalized_scores(scores);
        let r = plan(&m, C2, A2, PlanObjective::total()).unwrap();
        assert_eq!(r.path, p(&[C2, C1, A2]));
        assert_eq!(
            brute_force_plan(&m, C2, A2, PlanObjective::total()).unwrap().path,
            r.path
        );
    }

    #[test]
    fn errors() {
        let m = uniform(0.5);
        assert_eq!(
            plan(&m, B1, B2, PlanObjective::mean()),
            Err(PlanError::InvalidPair { from: B1, target: B2 })
        );
        let mut raw = m.clone();
        raw.normalized = false;
        assert_eq!(plan(&raw, C2, A1, PlanObjective::mean()), Err(PlanError::NotNormalized));

        // only empty cells out of C2
        let mut partial = uniform(0.5);
        for t in all_transitions().into_iter().filter(|t| t.source() == C2) {
            partial.cells.insert(t, crate::reward::CellStats::empty());
        }
        let forbid = PlanObjective {
            forbid_empty_cells: true,
            ..PlanObjective::mean()
        };
        assert_eq!(
            plan(&partial, C2, A1, forbid),
            Err(PlanError::InfeasiblePath { from: C2, target: A1 })
        );
        assert!(plan(&partial, C2, A1, PlanObjective::mean()).is_ok());
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_paths(C2, A1).len(), 16);
        assert_eq!(enumerate_paths(B2, B1).len(), 1);
        assert_eq!(enumerate_paths(C1, A2).len(), 4);
        assert!(enumerate_paths(A1, B1).is_empty());
    }

    #[test]
    fn sequential_paths() {
        assert_eq!(sequential_path(C2, A1).unwrap(), p(&[C2, C1, B2, B1, A2, A1]));
        assert_eq!(sequential_path(C2, A1).unwrap().step_count(), 5);
        assert_eq!(sequential_path(C2, B1).unwrap(), p(&[C2, C1, B2, B1]));
        assert_eq!(sequential_path(B2, A1).unwrap(), p(&[B2, B1, A2, A1]));
        assert!(sequential_path(A1, A1).is_err());
    }

    #[test]
    fn rris_examples() {
        let planned: BTreeMap<LevelPair, LevelPath> = [
            ((C2, B1), p(&[C2, B2, B1])),
            ((C2, A2), p(&[C2, B2, B1, A2])),
            ((C2, A1), p(&[C2, B2, B1, A2, A1])),
        ]
        .into_iter()
        .collect();
        let pairs: Vec<LevelPair> = planned.keys().copied().collect();
        assert!((rris(&pairs, &planned).unwrap() - 25.0).abs() < 1e-9);

        let seq: BTreeMap<LevelPair, LevelPath> = pairs
            .iter()
            .map(|&(s, t)| ((s, t), sequential_path(s, t).unwrap()))
            .collect();
        assert_eq!(rris(&pairs, &seq).unwrap(), 0.0);

        assert_eq!(
            rris(&[(C1, A1)], &planned),
            Err(PlanError::MissingPlan { from: C1, target: A1 })
        );
        assert_eq!(rris(&[], &planned), Err(PlanError::NoPairs));
        let table = rris_report(&pairs, &planned).unwrap().to_table();
        assert!(table.contains("RRIS 25.00%"));
    }

    #[test]
    fn synthetic_four_level_taxonomy() {
        // ranks 0..4; only the skip edge 3->1 and 1->0 are good
        let reward = |from: usize, to: usize| {
            Some(if (from, to) == (3, 1) || (from, to) == (1, 0) {
                1.0
            } else {
                0.1
            })
        };
        let r = plan_ranks(3, 0, &PlanObjective::mean(), reward).unwrap();
        assert_eq!(r.path, vec![3, 1, 0]);
        assert_eq!(r.objective_value, 1.0);
        assert!(plan_ranks(3, 0, &PlanObjective::mean(), |_, _| None).is_none());
    }

    #[test]
    fn dp_table_is_reported() {
        let r = plan(&uniform(0.5), C2, A1, PlanObjective::total()).unwrap();
        let v = |level, steps| {
            r.dp_table
                .iter()
                .find(|e| e.level == level && e.steps == steps)
                .map(|e| e.value)
        };
        assert_eq!(v(A1, 5), Some(2.5));
        assert_eq!(v(A1, 1), Some(0.5));
        assert_eq!(v(C1, 1), Some(0.5));
        assert_eq!(v(C1, 2), None);
    }
}
