//! Automatic metrics over a batch of cascade results: rank correlation,
//! RMSE and exact/adjacent accuracy on level indices, and mean
//! original-vs-output similarity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, SimilarityBackend};
use crate::levels::ProficiencyLevel;
use crate::orchestrator::CascadeResult;
use crate::par::Parallelism;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("length mismatch: {0} targets vs {1} estimates")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::DegenerateInput("empty input"));
    }
    Ok(())
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average-rank vectors. Constant
/// inputs are undefined and reported as an error rather than 0.
pub fn spearman(targets: &[f64], estimates: &[f64]) -> Result<f64, EvalError> {
    check_pair(targets, estimates)?;
    pearson(&average_ranks(targets), &average_ranks(estimates))
        .ok_or(EvalError::DegenerateInput("constant input has no rank correlation"))
}

pub fn rmse(targets: &[f64], estimates: &[f64]) -> Result<f64, EvalError> {
    check_pair(targets, estimates)?;
    let sq: f64 = targets.iter().zip(estimates).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / targets.len() as f64).sqrt())
}

/// Percentage of pairs within `tolerance` levels: 0 for exact accuracy,
/// 1 for adjacent accuracy.
pub fn accuracy(targets: &[f64], estimates: &[f64], tolerance: u8) -> Result<f64, EvalError> {
    check_pair(targets, estimates)?;
    let hits = targets
        .iter()
        .zip(estimates)
        .filter(|(a, b)| (*a - *b).abs() <= f64::from(tolerance))
        .count();
    Ok(100.0 * hits as f64 / targets.len() as f64)
}

/// Mean similarity as a percentage; `None` for an empty batch.
pub fn meaning_preservation(
    pairs: &[(String, String)],
    similarity: &dyn SimilarityBackend,
    parallelism: Parallelism,
) -> Result<Option<f64>, BackendError> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let scores = parallelism
        .map(pairs, |(a, b)| similarity.similarity(a, b))
        .into_iter()
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(Some(100.0 * scores.iter().sum::<f64>() / scores.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub spearman_rho: Option<f64>,
    pub rmse: Option<f64>,
    pub adjacent_accuracy_pct: Option<f64>,
    pub exact_accuracy_pct: Option<f64>,
    pub mean_similarity_pct: Option<f64>,
}

impl Metrics {
    fn absent() -> Self {
        Self {
            n: 0,
            spearman_rho: None,
            rmse: None,
            adjacent_accuracy_pct: None,
            exact_accuracy_pct: None,
            mean_similarity_pct: None,
        }
    }

    fn compute(rows: &[(&CascadeResult, f64)]) -> Self {
        if rows.is_empty() {
            return Self::absent();
        }
        let t: Vec<f64> = rows.iter().map(|(r, _)| f64::from(r.target_level.index())).collect();
        let e: Vec<f64> = rows.iter().map(|(r, _)| f64::from(r.achieved_level.index())).collect();
        let sim = 100.0 * rows.iter().map(|(_, s)| s).sum::<f64>() / rows.len() as f64;
        Self {
            n: rows.len(),
            spearman_rho: spearman(&t, &e).ok(),
            rmse: rmse(&t, &e).ok(),
            adjacent_accuracy_pct: accuracy(&t, &e, 1).ok(),
            exact_accuracy_pct: accuracy(&t, &e, 0).ok(),
            mean_similarity_pct: Some(sim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMetrics {
    pub source: ProficiencyLevel,
    pub target: ProficiencyLevel,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub overall: Metrics,
    /// The nine standard (C2/C1/B2 -> B1/A2/A1) cells first, then any other
    /// pairs present in the batch.
    pub per_transition: Vec<TransitionMetrics>,
}

pub fn build_report(
    results: &[CascadeResult],
    similarity: &dyn SimilarityBackend,
    parallelism: Parallelism,
) -> Result<MetricReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::DegenerateInput("empty batch"));
    }
    let sims = parallelism
        .map(results, |r| similarity.similarity(&r.source_text, &r.final_text))
        .into_iter()
        .collect::<Result<Vec<f64>, _>>()?;
    let rows: Vec<(&CascadeResult, f64)> = results.iter().zip(sims).collect();

    let mut pairs: Vec<(ProficiencyLevel, ProficiencyLevel)> = Vec::new();
    for s in ProficiencyLevel::SOURCES {
        for t in ProficiencyLevel::TARGETS {
            pairs.push((s, t));
        }
    }
    let mut extra: Vec<_> = rows
        .iter()
        .map(|(r, _)| (r.source_level, r.target_level))
        .filter(|p| !pairs.contains(p))
        .collect();
    extra.sort_unstable_by(|a, b| b.cmp(a));
    extra.dedup();
    pairs.extend(extra);

    let per_transition = pairs
        .into_iter()
        .map(|(source, target)| {
            let cell: Vec<_> = rows
                .iter()
                .filter(|(r, _)| r.source_level == source && r.target_level == target)
                .copied()
                .collect();
            TransitionMetrics {
                source,
                target,
                metrics: Metrics::compute(&cell),
            }
        })
        .collect();
    Ok(MetricReport {
        label: None,
        overall: Metrics::compute(&rows),
        per_transition,
    })
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) => format!("{x:.decimals$}"),
        None => "n/a".into(),
    }
}

/// One row per report, in the column order rho, AdjAcc, ExactAcc, RMSE,
/// similarity.
pub fn render_table(reports: &[MetricReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.label.as_deref().unwrap_or("run").len())
        .max()
        .unwrap_or(3)
        .max(6);
    let mut out = format!(
        "{:<width$}  {:>6}  {:>7}  {:>8}  {:>6}  {:>6}  {:>5}\n",
        "Config", "rho", "AdjAcc", "ExactAcc", "RMSE", "STS", "n"
    );
    for r in reports {
        let m = &r.overall;
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>7}  {:>8}  {:>6}  {:>6}  {:>5}\n",
            r.label.as_deref().unwrap_or("run"),
            cell(m.spearman_rho, 2),
            cell(m.adjacent_accuracy_pct, 2),
            cell(m.exact_accuracy_pct, 2),
            cell(m.rmse, 2),
            cell(m.mean_similarity_pct, 2),
            m.n
        ));
    }
    out
}

/// Per-transition breakdown of one report.
pub fn render_breakdown(report: &MetricReport) -> String {
    let mut out = format!(
        "{:<8}  {:>7}  {:>8}  {:>6}  {:>6}  {:>5}\n",
        "Pair", "AdjAcc", "ExactAcc", "RMSE", "STS", "n"
    );
    for c in &report.per_transition {
        let m = &c.metrics;
        out.push_str(&format!(
            "{:<8}  {:>7}  {:>8}  {:>6}  {:>6}  {:>5}\n",
            format!("{}->{}", c.source, c.target),
            cell(m.adjacent_accuracy_pct, 2),
            cell(m.exact_accuracy_pct, 2),
            cell(m.rmse, 2),
            cell(m.mean_similarity_pct, 2),
            m.n
        ));
    }
    out
}
