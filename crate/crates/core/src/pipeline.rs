//! End-to-end composition of the stages: reward matrix, plans, exemplar
//! store, grid runs and metric reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backends, GenerationProfile};
use crate::corpus::CorpusSplit;
use crate::evaluator::{build_report, EvalError, MetricReport};
use crate::exemplars::{exemplar_store_build, StoreBuild};
use crate::levels::{downward_transitions, LevelPath, ProficiencyLevel, Transition};
use crate::orchestrator::{run_configuration, ConfigFlags, PromptConfig, RunError, RunInputs, RunOutput, RunSettings};
use crate::par::Parallelism;
use crate::planner::{plan, rris_report, LevelPair, PlanError, PlanObjective, PlanResult, RrisReport};
use crate::reward::{build_reward_matrix, RewardBuild, RewardError, RewardMatrix};
use crate::validation::OneStepContext;

/// The five grid rows reported for each dataset, in planning/semantic/history
/// order.
pub const STANDARD_GRID: [ConfigFlags; 5] = [
    ConfigFlags::ONE_STEP,
    ConfigFlags {
        planning: false,
        semantic: true,
        history: false,
    },
    ConfigFlags {
        planning: true,
        semantic: false,
        history: true,
    },
    ConfigFlags {
        planning: true,
        semantic: true,
        history: false,
    },
    ConfigFlags::FULL,
];

/// C2/C1/B2 to B1/A2/A1, source-major.
pub fn standard_pairs() -> Vec<LevelPair> {
    ProficiencyLevel::SOURCES
        .iter()
        .flat_map(|&s| ProficiencyLevel::TARGETS.iter().map(move |&t| (s, t)))
        .collect()
}

/// Every downward transition between two of the six levels.
pub fn all_transitions() -> Vec<Transition> {
    downward_transitions(&ProficiencyLevel::ALL, ProficiencyLevel::A1)
}

/// Distinct transitions used by a set of paths, highest source first.
pub fn path_transitions<'a>(paths: impl IntoIterator<Item = &'a LevelPath>) -> Vec<Transition> {
    let mut out: Vec<Transition> = paths.into_iter().flat_map(|p| p.transitions()).collect();
    out.sort_unstable_by(|a, b| b.cmp(a));
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub prompt: PromptConfig,
    pub profile: GenerationProfile,
    pub objective: PlanObjective,
    /// Dev sentences per cell; `None` uses all.
    pub sample_cap: Option<usize>,
    pub exemplar_k: usize,
    /// Regenerate dev outputs for harvesting instead of reusing the reward
    /// stage's generations.
    pub fresh_exemplar_generations: bool,
    pub targets: Vec<ProficiencyLevel>,
    #[serde(skip)]
    pub parallelism: Parallelism,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prompt: PromptConfig::default(),
            profile: GenerationProfile::default(),
            objective: PlanObjective::default(),
            sample_cap: None,
            exemplar_k: 3,
            fresh_exemplar_generations: false,
            targets: ProficiencyLevel::TARGETS.to_vec(),
            parallelism: Parallelism::default(),
        }
    }
}

impl PipelineConfig {
    pub fn run_settings(&self, flags: ConfigFlags) -> RunSettings {
        RunSettings {
            flags,
            prompt: self.prompt.clone(),
            profile: self.profile.clone(),
            objective: self.objective,
            parallelism: self.parallelism,
            allow_store_fallback: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("exemplar store incomplete: {0}")]
    Exemplars(String),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub struct Prepared {
    pub reward: RewardBuild,
    /// Normalized.
    pub matrix: RewardMatrix,
    pub plans: BTreeMap<LevelPair, PlanResult>,
    pub rris: RrisReport,
    pub exemplars: StoreBuild,
}

pub fn plan_pairs(
    matrix: &RewardMatrix,
    pairs: &[LevelPair],
    objective: PlanObjective,
) -> Result<BTreeMap<LevelPair, PlanResult>, PlanError> {
    pairs
        .iter()
        .map(|&(s, t)| plan(matrix, s, t, objective).map(|r| ((s, t), r)))
        .collect()
}

/// Builds the reward matrix on dev, plans the standard pairs and harvests
/// exemplars for every transition the plans use.
pub fn prepare(corpus: &CorpusSplit, backends: &Backends, config: &PipelineConfig) -> Result<Prepared, PipelineError> {
    let ctx = OneStepContext {
        train: &corpus.train,
        generator: backends.generator.as_ref(),
        estimator: backends.estimator.as_ref(),
        prompt: &config.prompt,
        profile: &config.profile,
        parallelism: config.parallelism,
    };
    let reward = build_reward_matrix(&corpus.dev, &all_transitions(), &ctx, config.sample_cap);
    let matrix = reward.matrix.normalize()?;
    let pairs = standard_pairs();
    let plans = plan_pairs(&matrix, &pairs, config.objective)?;
    let paths: BTreeMap<LevelPair, LevelPath> = plans.iter().map(|(k, v)| (*k, v.path.clone())).collect();
    let rris = rris_report(&pairs, &paths)?;

    let mut needed = path_transitions(paths.values());
    // one-step rows of the grid use the direct transitions too
    needed.extend(pairs.iter().filter_map(|&(s, t)| Transition::new(s, t).ok()));
    needed.sort_unstable_by(|a, b| b.cmp(a));
    needed.dedup();
    let reuse = (!config.fresh_exemplar_generations).then_some(reward.records.as_slice());
    let exemplars = exemplar_store_build(
        &corpus.dev,
        &needed,
        &ctx,
        backends.similarity.as_ref(),
        config.exemplar_k,
        reuse,
    );
    if let Some(bad) = exemplars.fatal().next() {
        return Err(PipelineError::Exemplars(format!(
            "{}: {}",
            bad.transition,
            bad.fatal.as_deref().unwrap_or("")
        )));
    }
    Ok(Prepared {
        reward,
        matrix,
        plans,
        rris,
        exemplars,
    })
}

pub struct GridRow {
    pub flags: ConfigFlags,
    pub output: RunOutput,
    pub report: MetricReport,
}

pub fn run_grid(
    corpus: &CorpusSplit,
    prepared: &Prepared,
    backends: &Backends,
    config: &PipelineConfig,
    grid: &[ConfigFlags],
) -> Result<Vec<GridRow>, PipelineError> {
    let inputs = RunInputs {
        test: &corpus.test,
        targets: &config.targets,
        train: &corpus.train,
        matrix: Some(&prepared.matrix),
        store: Some(&prepared.exemplars.store),
    };
    grid.iter()
        .map(|&flags| {
            let output = run_configuration(inputs, &config.run_settings(flags), backends)?;
            let mut report = build_report(&output.results, backends.similarity.as_ref(), config.parallelism)?;
            report.label = Some(flags.label());
            Ok(GridRow { flags, output, report })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{synthesize, README_EN};

    #[test]
    fn pairs_and_transitions() {
        assert_eq!(standard_pairs().len(), 9);
        assert_eq!(all_transitions().len(), 15);
        let a = LevelPath::new(vec![ProficiencyLevel::C2, ProficiencyLevel::B2, ProficiencyLevel::A1]).unwrap();
        let b = LevelPath::new(vec![ProficiencyLevel::C2, ProficiencyLevel::B2]).unwrap();
        assert_eq!(path_transitions([&a, &b]).len(), 2);
    }

    #[test]
    fn mock_pipeline_runs_the_grid() {
        let corpus = synthesize(&README_EN, 11);
        let backends = Backends::mock();
        let config = PipelineConfig {
            sample_cap: Some(12),
            ..PipelineConfig::default()
        };
        let prepared = prepare(&corpus, &backends, &config).unwrap();
        assert!(prepared.matrix.normalized);
        assert_eq!(prepared.plans.len(), 9);
        let rows = run_grid(&corpus, &prepared, &backends, &config, &STANDARD_GRID).unwrap();
        assert_eq!(rows.len(), 5);
        for row in &rows {
            assert_eq!(row.output.attempted(), corpus.test.len() * 3);
            assert!(row.output.failures.is_empty());
        }
    }
}
