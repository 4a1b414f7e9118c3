//! Readability-controlled sentence simplification as a planned cascade of
//! CEFR level transitions.
//!
//! The pipeline: verify one-step simplifications on a dev split to build a
//! [`reward::RewardMatrix`], plan per-pair paths with [`planner::plan`],
//! harvest verified dev pairs into an [`exemplars::ExemplarStore`], then run
//! test sentences through [`orchestrator::run_cascade`] and score them with
//! [`evaluator::build_report`]. Model access goes through the traits in
//! [`backends`]; deterministic mocks are provided for tests.

pub mod backends;
pub mod corpus;
pub mod evaluator;
pub mod exemplars;
pub mod fixtures;
pub mod levels;
pub mod orchestrator;
pub mod par;
pub mod pipeline;
pub mod planner;
pub mod provenance;
pub mod reward;
pub mod validation;

pub use levels::{LevelPath, ProficiencyLevel, Transition};
pub use par::Parallelism;
