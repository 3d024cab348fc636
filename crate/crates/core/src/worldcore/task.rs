use std::fmt;

use serde::{Deserialize, Serialize};

use super::state::{WorldId, WorldState};
use crate::evalharness::EvaluatorSpec;
use crate::worlds;

/// Default episode budget: ten seconds at 10 Hz.
pub const DEFAULT_BUDGET_TICKS: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillCategory {
    Movement,
    Navigation,
    ResourceGathering,
    ObjectManagement,
    ToolUse,
    Construction,
    MenuInventory,
    Look,
    GameProgression,
}

impl SkillCategory {
    pub const ALL: [SkillCategory; 9] = [
        SkillCategory::Movement,
        SkillCategory::Navigation,
        SkillCategory::ResourceGathering,
        SkillCategory::ObjectManagement,
        SkillCategory::ToolUse,
        SkillCategory::Construction,
        SkillCategory::MenuInventory,
        SkillCategory::Look,
        SkillCategory::GameProgression,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SkillCategory::Movement => "movement",
            SkillCategory::Navigation => "navigation",
            SkillCategory::ResourceGathering => "resource_gathering",
            SkillCategory::ObjectManagement => "object_management",
            SkillCategory::ToolUse => "tool_use",
            SkillCategory::Construction => "construction",
            SkillCategory::MenuInventory => "menu_inventory",
            SkillCategory::Look => "look",
            SkillCategory::GameProgression => "game_progression",
        }
    }
}

impl fmt::Display for SkillCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_budget() -> u32 {
    DEFAULT_BUDGET_TICKS
}

/// A save state plus an instruction and the means of grading it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub world_id: WorldId,
    pub save_state_ref: String,
    pub instruction: String,
    pub evaluator_spec: EvaluatorSpec,
    #[serde(default)]
    pub distractor_ids: Vec<String>,
    #[serde(default = "default_budget")]
    pub budget_ticks: u32,
    pub skill_category: SkillCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaskError {
    #[error("task {task}: save state {reference:?} is not defined")]
    UnknownSaveState { task: String, reference: String },
    #[error("task {task}: save state {reference:?} belongs to {actual}, task says {declared}")]
    WorldMismatch {
        task: String,
        reference: String,
        actual: WorldId,
        declared: WorldId,
    },
    #[error("task {task}: unknown entity {entity:?}")]
    DanglingEntity { task: String, entity: String },
    #[error("task {task}: {reason}")]
    Invalid { task: String, reason: String },
}

impl TaskSpec {
    /// Static checks that do not need an instantiated state.
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.budget_ticks == 0 {
            // Allowed for degenerate evaluation runs, but never in a registry.
            return Err(TaskError::Invalid {
                task: self.task_id.clone(),
                reason: "budget_ticks must be > 0".into(),
            });
        }
        self.evaluator_spec
            .validate()
            .map_err(|reason| TaskError::Invalid {
                task: self.task_id.clone(),
                reason,
            })?;
        let layout = worlds::layout(&self.save_state_ref).ok_or_else(|| {
            TaskError::UnknownSaveState {
                task: self.task_id.clone(),
                reference: self.save_state_ref.clone(),
            }
        })?;
        if layout.world != self.world_id {
            return Err(TaskError::WorldMismatch {
                task: self.task_id.clone(),
                reference: self.save_state_ref.clone(),
                actual: layout.world,
                declared: self.world_id,
            });
        }
        for label in self
            .evaluator_spec
            .entity_refs()
            .iter()
            .chain(&self.distractor_ids)
        {
            if !layout.has_label(label) {
                return Err(TaskError::DanglingEntity {
                    task: self.task_id.clone(),
                    entity: label.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Builds the initial state for `spec`. The same `(spec, seed)` always yields the same state,
/// and every task sharing a save state gets the same state for a given seed.
pub fn instantiate_task(spec: &TaskSpec, seed: u64) -> Result<WorldState, TaskError> {
    let layout = worlds::layout(&spec.save_state_ref).ok_or_else(|| TaskError::UnknownSaveState {
        task: spec.task_id.clone(),
        reference: spec.save_state_ref.clone(),
    })?;
    if layout.world != spec.world_id {
        return Err(TaskError::WorldMismatch {
            task: spec.task_id.clone(),
            reference: spec.save_state_ref.clone(),
            actual: layout.world,
            declared: spec.world_id,
        });
    }
    let state = layout.instantiate(seed);
    for label in spec
        .evaluator_spec
        .entity_refs()
        .iter()
        .chain(&spec.distractor_ids)
    {
        if state.content.scene().find_label(label).is_none() {
            return Err(TaskError::DanglingEntity {
                task: spec.task_id.clone(),
                entity: label.clone(),
            });
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Success,
    Failure,
    Timeout,
    DistractorFailure,
}

impl EpisodeStatus {
    pub fn is_success(self) -> bool {
        self == EpisodeStatus::Success
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeStatus::Success => "success",
            EpisodeStatus::Failure => "failure",
            EpisodeStatus::Timeout => "timeout",
            EpisodeStatus::DistractorFailure => "distractor_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub status: EpisodeStatus,
    pub ticks_used: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ref: Option<String>,
}
