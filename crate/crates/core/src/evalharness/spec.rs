//! Evaluator specifications and the per-episode evaluator that applies them tick by tick.

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::worldcore::{ActionEvent, Key, Observation, TaskError, TaskSpec, TextEvent, WorldState};
use crate::worlds::{check_goal, distractor_contact, GoalStatus, Predicate, Resource, ResolvedGoal};

/// A key that must have been pressed shortly before the final pattern matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRequirement {
    pub key: Key,
    pub within_ticks: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorSpec {
    GroundTruth {
        predicate: Predicate,
        #[serde(default)]
        entities: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        resource: Option<Resource>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amount: Option<u32>,
    },
    OcrPattern {
        patterns: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        action: Option<ActionRequirement>,
    },
    Judged {
        rubric: String,
    },
}

impl EvaluatorSpec {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            EvaluatorSpec::GroundTruth {
                predicate,
                entities,
                resource,
                ..
            } => {
                if entities.len() != predicate.arity() {
                    return Err(format!(
                        "predicate {predicate:?} takes {} entities, got {}",
                        predicate.arity(),
                        entities.len()
                    ));
                }
                if *predicate == Predicate::Gathered && resource.is_none() {
                    return Err("gathered predicate needs a resource".into());
                }
                Ok(())
            }
            EvaluatorSpec::OcrPattern { patterns, .. } => {
                if patterns.is_empty() {
                    return Err("ocr evaluator needs at least one pattern".into());
                }
                for p in patterns {
                    Regex::new(p).map_err(|e| format!("pattern {p:?}: {e}"))?;
                }
                Ok(())
            }
            EvaluatorSpec::Judged { rubric } => {
                if rubric.trim().is_empty() {
                    return Err("judged evaluator needs a rubric".into());
                }
                Ok(())
            }
        }
    }

    /// Entity labels the evaluator refers to.
    pub fn entity_refs(&self) -> Vec<String> {
        match self {
            EvaluatorSpec::GroundTruth { entities, .. } => entities.clone(),
            _ => Vec::new(),
        }
    }
}

/// Tick at which `patterns` have all matched in order, or `None`.
///
/// When `action` is given, its key must appear in an action stamped within
/// `within_ticks` before the event that completes the last pattern.
pub fn ocr_match_tick(
    events: &[TextEvent],
    patterns: &[Regex],
    action: Option<ActionRequirement>,
    actions: &[ActionEvent],
) -> Option<u64> {
    let (last, init) = patterns.split_last()?;
    let mut start = 0;
    for re in init {
        let i = events[start..].iter().position(|e| re.is_match(&e.text))?;
        start += i + 1;
    }
    events[start..]
        .iter()
        .filter(|e| last.is_match(&e.text))
        .find(|e| match action {
            None => true,
            Some(req) => actions.iter().any(|a| {
                a.keys.contains(req.key)
                    && a.tick < e.tick
                    && a.tick + u64::from(req.within_ticks) >= e.tick
            }),
        })
        .map(|e| e.tick)
}

/// Whether every pattern matches some event, in order.
pub fn ocr_evaluate(
    events: &[TextEvent],
    patterns: &[String],
    action: Option<ActionRequirement>,
    actions: &[ActionEvent],
) -> Result<bool, regex::Error> {
    let compiled = patterns
        .iter()
        .map(|p| Regex::new(p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ocr_match_tick(events, &compiled, action, actions).is_some())
}

#[derive(Debug, Clone)]
enum Check {
    Truth,
    Ocr {
        patterns: Vec<Regex>,
        action: Option<ActionRequirement>,
    },
    Judged,
}

/// Incremental, monotone grading of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeEvaluator {
    goal: ResolvedGoal,
    check: Check,
    events: Vec<TextEvent>,
    actions: Vec<ActionEvent>,
    status: GoalStatus,
    decided_at: Option<u64>,
    /// Log entries before this index predate the evaluation.
    log_start: usize,
}

impl EpisodeEvaluator {
    pub fn new(task: &TaskSpec, initial: &WorldState) -> Result<Self, TaskError> {
        let invalid = |reason: String| TaskError::Invalid {
            task: task.task_id.clone(),
            reason,
        };
        task.evaluator_spec.validate().map_err(invalid)?;
        let scene = initial.content.scene();
        let (predicate, entities, resource, amount, check) = match &task.evaluator_spec {
            EvaluatorSpec::GroundTruth {
                predicate,
                entities,
                resource,
                amount,
            } => (Some(*predicate), entities.clone(), *resource, amount.unwrap_or(1), Check::Truth),
            EvaluatorSpec::OcrPattern { patterns, action } => {
                let patterns = patterns
                    .iter()
                    .map(|p| Regex::new(p).expect("validated"))
                    .collect();
                (None, Vec::new(), None, 1, Check::Ocr { patterns, action: *action })
            }
            EvaluatorSpec::Judged { .. } => (None, Vec::new(), None, 1, Check::Judged),
        };
        let goal = ResolvedGoal::resolve(scene, predicate, &entities, &task.distractor_ids, resource, amount)
            .map_err(invalid)?;
        Ok(EpisodeEvaluator {
            goal,
            check,
            events: Vec::new(),
            actions: Vec::new(),
            status: GoalStatus::Ongoing,
            decided_at: None,
            log_start: scene.log.len(),
        })
    }

    pub fn goal(&self) -> &ResolvedGoal {
        &self.goal
    }

    pub fn status(&self) -> GoalStatus {
        self.status
    }

    /// Tick at which the status became terminal.
    pub fn decided_at(&self) -> Option<u64> {
        self.decided_at
    }

    pub fn is_judged(&self) -> bool {
        matches!(self.check, Check::Judged)
    }

    /// Grades the state reached by applying `action` (observation `obs`). Terminal statuses stick.
    pub fn update(&mut self, state: &WorldState, action: &ActionEvent, obs: &Observation) -> GoalStatus {
        self.actions.push(*action);
        self.events.extend(obs.text_events.iter().cloned());
        if self.status.is_terminal() {
            return self.status;
        }
        let log = &state.content.scene().log[self.log_start.min(state.content.scene().log.len())..];
        let status = match &self.check {
            Check::Truth => check_goal(state, &self.goal, log),
            _ if distractor_contact(log, &self.goal.distractors) => GoalStatus::DistractorFailure,
            Check::Ocr { patterns, action } => {
                if ocr_match_tick(&self.events, patterns, *action, &self.actions).is_some() {
                    GoalStatus::Success
                } else {
                    GoalStatus::Ongoing
                }
            }
            Check::Judged => GoalStatus::Ongoing,
        };
        if status.is_terminal() {
            self.status = status;
            self.decided_at = Some(state.tick);
        }
        self.status
    }

    pub fn events(&self) -> &[TextEvent] {
        &self.events
    }
}
