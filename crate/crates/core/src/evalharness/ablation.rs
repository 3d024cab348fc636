//! Training and evaluating the ablation conditions.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::episode::{run_episode, AgentRef, EpisodeOptions, EvalError};
use super::report::{EvalReport, TaskOutcome};
use super::stats::PermutationMode;
use crate::agent::{train, ActOptions, AgentConfig, Parameters, TrainError, Trainer, TrainingSet};
use crate::worldcore::{TaskSpec, WorldId};

/// One agent variant of the suite.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    /// Trained on every world.
    Multiworld,
    /// Trained and evaluated on one world.
    Specialist { world: WorldId },
    /// Trained on every world with all instructions removed, evaluated without them.
    NoLanguage,
    /// Trained on every world but `held_out`, evaluated on `held_out`.
    ZeroShot { held_out: WorldId },
}

impl Condition {
    pub fn id(&self) -> String {
        match self {
            Condition::Multiworld => "multiworld".into(),
            Condition::Specialist { world } => format!("specialist:{world}"),
            Condition::NoLanguage => "no_language".into(),
            Condition::ZeroShot { held_out } => format!("zero_shot:{held_out}"),
        }
    }

    pub fn parse(s: &str) -> Option<Condition> {
        match s.split_once(':') {
            None if s == "multiworld" => Some(Condition::Multiworld),
            None if s == "no_language" => Some(Condition::NoLanguage),
            Some(("specialist", w)) => WorldId::parse(w).map(|world| Condition::Specialist { world }),
            Some(("zero_shot", w)) => WorldId::parse(w).map(|held_out| Condition::ZeroShot { held_out }),
            _ => None,
        }
    }

    /// The full set for `worlds`: multiworld, one specialist per world, no-language, and
    /// one zero-shot agent per held-out world.
    pub fn standard(worlds: &[WorldId]) -> Vec<Condition> {
        let mut out = vec![Condition::Multiworld];
        out.extend(worlds.iter().map(|&world| Condition::Specialist { world }));
        out.push(Condition::NoLanguage);
        if worlds.len() > 1 {
            out.extend(worlds.iter().map(|&held_out| Condition::ZeroShot { held_out }));
        }
        out
    }

    pub fn train_worlds(&self, worlds: &[WorldId]) -> Vec<WorldId> {
        match self {
            Condition::Multiworld | Condition::NoLanguage => worlds.to_vec(),
            Condition::Specialist { world } => vec![*world],
            Condition::ZeroShot { held_out } => worlds.iter().copied().filter(|w| w != held_out).collect(),
        }
    }

    pub fn eval_worlds(&self, worlds: &[WorldId]) -> Vec<WorldId> {
        match self {
            Condition::Multiworld | Condition::NoLanguage => worlds.to_vec(),
            Condition::Specialist { world } => vec![*world],
            Condition::ZeroShot { held_out } => vec![*held_out],
        }
    }

    pub fn uses_language(&self) -> bool {
        *self != Condition::NoLanguage
    }
}

/// What to evaluate and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub worlds: Vec<WorldId>,
    pub conditions: Vec<Condition>,
    /// Training seeds; one checkpoint per (condition, seed).
    pub run_seeds: Vec<u64>,
    pub cfg_scales: Vec<f64>,
    /// Several episodes per task in research worlds.
    pub research_eval_seeds: Vec<u64>,
    /// One episode per task in the game-like world.
    pub game_eval_seeds: Vec<u64>,
    pub n_resamples: usize,
    pub permutation_seed: u64,
    pub permutation_mode: PermutationMode,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        let worlds = WorldId::ALL.to_vec();
        SuiteConfig {
            conditions: Condition::standard(&worlds),
            worlds,
            run_seeds: vec![0, 1, 2],
            cfg_scales: vec![0.0, 1.0],
            research_eval_seeds: vec![1000, 1001],
            game_eval_seeds: vec![1000],
            n_resamples: 10_000,
            permutation_seed: 0,
            permutation_mode: PermutationMode::Pooled,
        }
    }
}

impl SuiteConfig {
    pub fn eval_seeds(&self, world: WorldId) -> &[u64] {
        if world.is_research() {
            &self.research_eval_seeds
        } else {
            &self.game_eval_seeds
        }
    }
}

/// Trained parameters keyed by (condition id, run seed).
pub type CheckpointSet = BTreeMap<(String, u64), Arc<Parameters>>;

/// Trains one condition. `full` must carry instructions; `no_language` is the same data
/// with instructions removed.
pub fn train_condition(
    full: &TrainingSet,
    no_language: &TrainingSet,
    condition: &Condition,
    worlds: &[WorldId],
    config: &AgentConfig,
    seed: u64,
) -> Result<Trainer, TrainError> {
    let source = if condition.uses_language() { full } else { no_language };
    let set = source.restrict(&condition.train_worlds(worlds))?;
    let config = AgentConfig {
        seed,
        ..config.clone()
    };
    train(&set, &config, |_, _| {})
}

/// Trains every configured (condition, seed).
pub fn train_suite(
    full: &TrainingSet,
    no_language: &TrainingSet,
    suite: &SuiteConfig,
    config: &AgentConfig,
    mut progress: impl FnMut(&Condition, u64),
) -> Result<CheckpointSet, TrainError> {
    let mut out = CheckpointSet::new();
    for cond in &suite.conditions {
        for &seed in &suite.run_seeds {
            progress(cond, seed);
            let t = train_condition(full, no_language, cond, &suite.worlds, config, seed)?;
            out.insert((cond.id(), seed), Arc::new(t.params));
        }
    }
    Ok(out)
}

/// Runs `jobs` on all available cores, keeping input order.
fn parallel_map<T: Sync, R: Send>(jobs: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    if threads <= 1 {
        return jobs.iter().map(&f).collect();
    }
    let chunk = jobs.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("evaluation thread panicked")).collect()
    })
}

/// Evaluates every condition with a checkpoint on every applicable task, for each CFG
/// scale, and assembles the report. Conditions without checkpoints are skipped and listed.
pub fn run_ablation_suite(suite: &SuiteConfig, tasks: &[TaskSpec], checkpoints: &CheckpointSet) -> Result<EvalReport, EvalError> {
    let mut outcomes: BTreeMap<(Condition, u64), Vec<TaskOutcome>> = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut jobs = Vec::new();
    for cond in &suite.conditions {
        let worlds = cond.eval_worlds(&suite.worlds);
        for &run_seed in &suite.run_seeds {
            let Some(params) = checkpoints.get(&(cond.id(), run_seed)) else {
                log::warn!("no checkpoint for {} seed {run_seed}; skipped", cond.id());
                skipped.push(format!("{} seed {run_seed}: missing checkpoint", cond.id()));
                continue;
            };
            for &lambda in &suite.cfg_scales {
                let agent = AgentRef::Policy {
                    params: params.clone(),
                    opts: ActOptions {
                        cfg_scale: lambda,
                        ignore_instruction: !cond.uses_language(),
                        ..ActOptions::from_params(params)
                    },
                };
                for task in tasks.iter().filter(|t| worlds.contains(&t.world_id)) {
                    for &eval_seed in suite.eval_seeds(task.world_id) {
                        jobs.push((cond.clone(), run_seed, lambda, agent.clone(), task, eval_seed));
                    }
                }
            }
        }
    }
    let results = parallel_map(&jobs, |(_, _, _, agent, task, seed)| run_episode(agent, task, *seed, &EpisodeOptions::default()));
    for ((cond, run_seed, lambda, _, task, eval_seed), r) in jobs.iter().zip(results) {
        let r = r?;
        outcomes.entry((cond.clone(), lambda.to_bits())).or_default().push(TaskOutcome {
                task_id: task.task_id.clone(),
                world: task.world_id,
                skill: task.skill_category,
                run_seed: *run_seed,
                eval_seed: *eval_seed,
                status: r.outcome.status,
                ticks_used: r.outcome.ticks_used,
            });
    }
    Ok(EvalReport::build(suite, outcomes, skipped))
}
