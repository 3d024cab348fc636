//! The built-in task registry and its TOML file form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::goal::Predicate;
use super::harvest::Resource;
use super::layouts::{layouts, Layout};
use crate::evalharness::{ActionRequirement, EvaluatorSpec};
use crate::worldcore::{Key, SkillCategory, TaskError, TaskSpec, WorldId, DEFAULT_BUDGET_TICKS};

pub const REGISTRY_VERSION: u32 = 1;

/// Shared tasks every layout draws from, so each world has movement and look tasks
/// that mean the same thing everywhere.
const GENERIC: [(&str, &str, Predicate, SkillCategory); 8] = [
    ("move_forward", "move forward", Predicate::MoveForward, SkillCategory::Movement),
    ("jump", "jump", Predicate::Jumped, SkillCategory::Movement),
    ("turn_left", "turn left", Predicate::TurnedLeft, SkillCategory::Look),
    ("look_up", "look up", Predicate::LookUp, SkillCategory::Look),
    ("move_backward", "move backward", Predicate::MoveBackward, SkillCategory::Movement),
    ("turn_right", "turn right", Predicate::TurnedRight, SkillCategory::Look),
    ("look_down", "look down", Predicate::LookDown, SkillCategory::Look),
    ("open_inventory", "open the inventory", Predicate::InventoryOpen, SkillCategory::MenuInventory),
];

/// Generic task indices used by the `i`-th layout of a world.
pub fn generic_indices(i: usize) -> [usize; 4] {
    [(2 * i) % 8, (2 * i + 1) % 8, (2 * i + 4) % 8, (2 * i + 5) % 8]
}

fn slug(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join("_")
}

struct Builder<'a> {
    layout: &'a Layout,
    out: Vec<TaskSpec>,
}

impl Builder<'_> {
    fn push(&mut self, instruction: &str, evaluator_spec: EvaluatorSpec, category: SkillCategory, exempt: &[&str]) {
        let entities = evaluator_spec.entity_refs();
        let distractor_ids = self
            .layout
            .labels()
            .filter(|l| !entities.iter().any(|e| e == l) && !exempt.contains(l) && *l != "critter")
            .map(String::from)
            .collect();
        let short = self.layout.reference.split('/').nth(1).unwrap_or(self.layout.reference);
        self.out.push(TaskSpec {
            task_id: format!("{}/{}/{}", self.layout.world.as_str(), short, slug(instruction)),
            world_id: self.layout.world,
            save_state_ref: self.layout.reference.to_string(),
            instruction: instruction.to_string(),
            evaluator_spec,
            distractor_ids,
            budget_ticks: DEFAULT_BUDGET_TICKS,
            skill_category: category,
        });
    }

    fn truth(&mut self, instruction: &str, predicate: Predicate, entities: &[&str], category: SkillCategory) {
        self.truth_except(instruction, predicate, entities, category, &[]);
    }

    fn truth_except(&mut self, instruction: &str, predicate: Predicate, entities: &[&str], category: SkillCategory, exempt: &[&str]) {
        let spec = EvaluatorSpec::GroundTruth {
            predicate,
            entities: entities.iter().map(|s| s.to_string()).collect(),
            resource: None,
            amount: None,
        };
        self.push(instruction, spec, category, exempt);
    }

    /// OCR task; `exempt` lists objects the solution may touch without being named.
    fn ocr(&mut self, instruction: &str, patterns: &[&str], action: Option<ActionRequirement>, category: SkillCategory, exempt: &[&str]) {
        let spec = EvaluatorSpec::OcrPattern {
            patterns: patterns.iter().map(|s| s.to_string()).collect(),
            action,
        };
        self.push(instruction, spec, category, exempt);
    }

    fn gather(&mut self, instruction: &str, res: Resource, node: &str) {
        let pattern = format!(r"^{} \+\d+$", res.name());
        // Every object other than the node is a distractor.
        let all: Vec<&str> = self.layout.labels().collect();
        let spec = EvaluatorSpec::OcrPattern {
            patterns: vec![pattern],
            action: None,
        };
        let exempt: Vec<&str> = all.into_iter().filter(|l| *l == node).collect();
        self.push(instruction, spec, SkillCategory::ResourceGathering, &exempt);
    }

    fn generic(&mut self, idx: usize) {
        let (_, instruction, predicate, category) = GENERIC[idx];
        if self.layout.world == WorldId::Harvest && predicate == Predicate::InventoryOpen {
            let req = ActionRequirement {
                key: Key::E,
                within_ticks: 5,
            };
            self.ocr(instruction, &["^Inventory$"], Some(req), category, &[]);
        } else {
            self.truth(instruction, predicate, &[], category);
        }
    }
}

fn tasks_for(index: usize, layout: &Layout) -> Vec<TaskSpec> {
    use Predicate::*;
    use SkillCategory as C;
    let mut b = Builder {
        layout,
        out: Vec::new(),
    };
    for i in generic_indices(index) {
        b.generic(i);
    }
    let name = layout.reference.split('/').nth(1).unwrap_or_default();
    match name {
        "two_rooms_a" => {
            b.truth("lift the green cube", Holding, &["green_cube"], C::ObjectManagement);
            b.truth("pick up the red ball", Holding, &["red_ball"], C::ObjectManagement);
            b.truth("go to the blue cube", NextTo, &["blue_cube"], C::Navigation);
            b.truth("go to the yellow ball", NextTo, &["yellow_ball"], C::Navigation);
        }
        "two_rooms_b" => {
            b.truth("lift the red cube", Holding, &["red_cube"], C::ObjectManagement);
            b.truth("pick up the blue ball", Holding, &["blue_ball"], C::ObjectManagement);
            b.truth("go to the yellow cube", NextTo, &["yellow_cube"], C::Navigation);
            b.truth("go to the green ball", NextTo, &["green_ball"], C::Navigation);
        }
        "four_rooms" => {
            b.truth("pick up the white cube", Holding, &["white_cube"], C::ObjectManagement);
            b.truth("lift the blue ball", Holding, &["blue_ball"], C::ObjectManagement);
            b.truth("go to the red cube", NextTo, &["red_cube"], C::Navigation);
            b.truth("go to the green ball", NextTo, &["green_ball"], C::Navigation);
        }
        "kitchen_knife" => {
            b.truth_except("use the knife to chop the carrot", Chopped, &["carrot"], C::ToolUse, &["knife"]);
            b.truth_except("drop the knife", Dropped, &["knife"], C::ObjectManagement, &[]);
            b.truth_except("go to the green cube", NextTo, &["green_cube"], C::Navigation, &["knife"]);
            b.truth_except("go to the blue ball", NextTo, &["blue_ball"], C::Navigation, &["knife"]);
        }
        "kitchen_empty" => {
            b.truth("pick up the knife", Holding, &["knife"], C::ObjectManagement);
            b.truth("pick up the carrot", Holding, &["carrot"], C::ObjectManagement);
            b.truth("lift the red cube", Holding, &["red_cube"], C::ObjectManagement);
            b.truth("go to the yellow ball", NextTo, &["yellow_ball"], C::Navigation);
        }
        "holding_red" => {
            b.truth("put the red block on the blue block", StackedOn, &["red_block", "blue_block"], C::Construction);
            b.truth("put the red block on the green block", StackedOn, &["red_block", "green_block"], C::Construction);
            b.truth("put the red block on the yellow block", StackedOn, &["red_block", "yellow_block"], C::Construction);
            b.truth("drop the red block", Dropped, &["red_block"], C::ObjectManagement);
        }
        "loose_blocks" => {
            b.truth("pick up the red block", Holding, &["red_block"], C::ObjectManagement);
            b.truth("pick up the green block", Holding, &["green_block"], C::ObjectManagement);
            b.truth("go to the blue block", NextTo, &["blue_block"], C::Navigation);
            b.truth("go to the yellow block", NextTo, &["yellow_block"], C::Navigation);
        }
        "connector" => {
            b.truth("attach the connector to the top of the large block", StackedOn, &["connector", "large_block"], C::Construction);
            b.truth("attach the connector to the top of the small block", StackedOn, &["connector", "small_block"], C::Construction);
            b.truth("pick up the red block", Holding, &["red_block"], C::ObjectManagement);
            b.truth("go to the large block", NextTo, &["large_block"], C::Navigation);
        }
        "tower" => {
            b.truth("finish the tower", StackedOn, &["yellow_block", "tower_mid"], C::GameProgression);
            b.truth("put the yellow block on the red block", StackedOn, &["yellow_block", "red_block"], C::Construction);
            b.truth("pick up the red block", Holding, &["red_block"], C::ObjectManagement);
            b.truth("go to the tower", NextTo, &["tower_base"], C::Navigation);
        }
        "stacked" => {
            b.truth("take the red block off the blue block", Unstacked, &["red_block", "blue_block"], C::Construction);
            b.truth("pick up the green block", Holding, &["green_block"], C::ObjectManagement);
            b.truth("pick up the yellow block", Holding, &["yellow_block"], C::ObjectManagement);
            b.truth("go to the blue block", NextTo, &["blue_block"], C::Navigation);
        }
        "glade" => {
            b.gather("collect wood", Resource::Wood, "tree");
            b.gather("mine stone", Resource::Stone, "rock");
            b.gather("pick berries", Resource::Berries, "berry_bush");
            b.gather("mine carbon", Resource::Carbon, "carbon_deposit");
        }
        "workshop" => {
            b.ocr("craft a plank", &[r"^Plank \+1$"], None, C::GameProgression, &[]);
            let all: Vec<&str> = layout.labels().collect();
            b.ocr("use the visor", &["^Visor scan"], None, C::ToolUse, &all);
            b.gather("collect wood", Resource::Wood, "tree");
            b.gather("mine stone", Resource::Stone, "rock");
        }
        "quarry" => {
            b.gather("mine stone", Resource::Stone, "rock");
            b.gather("mine carbon", Resource::Carbon, "carbon_deposit");
            b.gather("collect wood", Resource::Wood, "tree");
            let all: Vec<&str> = layout.labels().collect();
            b.ocr("use the visor", &["^Visor scan"], None, C::ToolUse, &all);
        }
        "orchard" => {
            b.gather("pick berries", Resource::Berries, "berry_bush");
            b.gather("collect wood", Resource::Wood, "tree");
            b.gather("mine stone", Resource::Stone, "rock");
            let req = ActionRequirement {
                key: Key::Esc,
                within_ticks: 5,
            };
            b.ocr("open the menu", &["^Menu opened$"], Some(req), C::MenuInventory, &[]);
        }
        "camp" => {
            b.gather("collect wood", Resource::Wood, "tree");
            b.gather("mine carbon", Resource::Carbon, "carbon_deposit");
            b.gather("pick berries", Resource::Berries, "berry_bush");
            b.ocr("make a plank", &[r"^Wood \+\d+$", r"^Plank \+1$"], None, C::GameProgression, &["tree"]);
        }
        other => unreachable!("layout {other} has no task list"),
    }
    b.out
}

/// All built-in tasks, optionally restricted to one world.
pub fn registry_list(world: Option<WorldId>) -> Vec<TaskSpec> {
    let mut per_world = [0usize; 3];
    let mut out = Vec::new();
    for layout in layouts() {
        let i = &mut per_world[layout.world.code() as usize];
        let tasks = tasks_for(*i, layout);
        *i += 1;
        if world.is_none_or(|w| w == layout.world) {
            out.extend(tasks);
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported registry version {0}")]
    Version(u32),
    #[error("duplicate task id {0}")]
    Duplicate(String),
    #[error(transparent)]
    Task(#[from] TaskError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegistryFile {
    version: u32,
    #[serde(default, rename = "task")]
    tasks: Vec<TaskSpec>,
}

pub fn registry_to_toml(tasks: &[TaskSpec]) -> String {
    let file = RegistryFile {
        version: REGISTRY_VERSION,
        tasks: tasks.to_vec(),
    };
    toml::to_string_pretty(&file).expect("registry serializes")
}

/// Parses and validates a registry document.
pub fn registry_from_toml(text: &str) -> Result<Vec<TaskSpec>, RegistryError> {
    let file: RegistryFile = toml::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
    if file.version != REGISTRY_VERSION {
        return Err(RegistryError::Version(file.version));
    }
    let mut seen = std::collections::BTreeSet::new();
    for t in &file.tasks {
        if !seen.insert(t.task_id.clone()) {
            return Err(RegistryError::Duplicate(t.task_id.clone()));
        }
        t.validate()?;
    }
    Ok(file.tasks)
}

pub fn load_registry(path: &Path) -> Result<Vec<TaskSpec>, RegistryError> {
    let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    registry_from_toml(&text)
}

pub fn save_registry(path: &Path, tasks: &[TaskSpec]) -> Result<(), RegistryError> {
    std::fs::write(path, registry_to_toml(tasks)).map_err(|source| RegistryError::Io {
        path: path.display().to_string(),
        source,
    })
}
