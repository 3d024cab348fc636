//! Evaluation: evaluator specs, episode grading, statistics and the ablation suite.

mod ablation;
mod episode;
mod report;
mod spec;
mod stats;

pub use episode::{
    logprob_eval, run_episode, static_probe, switch_test, ActionPredicate, AgentRef, EpisodeOptions, EpisodeResult, EvalError,
    ScriptedClient, SwitchOutcome,
};
pub use ablation::{run_ablation_suite, train_condition, train_suite, CheckpointSet, Condition, SuiteConfig};
pub use report::{label, Comparison, ConditionReport, EvalReport, Rate, TaskOutcome, REPORT_VERSION};
pub use spec::{ocr_evaluate, ocr_match_tick, ActionRequirement, EpisodeEvaluator, EvaluatorSpec};
pub use stats::{
    aggregate_all, aggregate_judgments, binomial, normalize_vs_specialist, parse_judgments,
    permutation_test, permutation_test_monte_carlo, success_rate, JudgmentRecord, Normalized,
    PermutationMode, PermutationResult, Rating, StatsError, EXHAUSTIVE_LIMIT, STAT_TOL, Z95,
};
