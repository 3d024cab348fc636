//! Ground-truth goal predicates and the distractor rule.

use serde::{Deserialize, Serialize};

use super::grid::{Interaction, Menu, Scene, Verb};
use super::harvest::Resource;
use super::WorldContent;
use crate::worldcore::WorldState;

/// Displacement needed for the move-forward/backward goals.
pub const MOVE_CELLS: i16 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    MoveForward,
    MoveBackward,
    TurnedLeft,
    TurnedRight,
    LookUp,
    LookDown,
    Jumped,
    InventoryOpen,
    MenuOpen,
    /// `entities[0]` is held.
    Holding,
    /// Avatar is orthogonally adjacent to `entities[0]`.
    NextTo,
    Chopped,
    Dropped,
    /// `entities[0]` attached on top of `entities[1]`.
    StackedOn,
    /// `entities[0]` no longer attached to `entities[1]`.
    Unstacked,
    /// Inventory gained `amount` of `resource` since the episode began.
    Gathered,
}

impl Predicate {
    /// Number of entity references the predicate takes.
    pub fn arity(self) -> usize {
        match self {
            Predicate::Holding | Predicate::NextTo | Predicate::Chopped | Predicate::Dropped => 1,
            Predicate::StackedOn | Predicate::Unstacked => 2,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalStatus {
    Ongoing,
    Success,
    Failure,
    DistractorFailure,
}

impl GoalStatus {
    pub fn is_terminal(self) -> bool {
        self != GoalStatus::Ongoing
    }
}

/// A goal with entity labels replaced by object ids in a concrete state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedGoal {
    pub predicate: Option<Predicate>,
    pub entities: Vec<u16>,
    pub resource: Option<Resource>,
    pub amount: u32,
    pub distractors: Vec<u16>,
}

impl ResolvedGoal {
    /// Resolves labels against `scene`. `predicate` is `None` for goals judged by other means,
    /// which still carry the distractor rule.
    pub fn resolve(
        scene: &Scene,
        predicate: Option<Predicate>,
        entities: &[String],
        distractors: &[String],
        resource: Option<Resource>,
        amount: u32,
    ) -> Result<ResolvedGoal, String> {
        let ids = |labels: &[String]| {
            labels
                .iter()
                .map(|l| {
                    scene
                        .find_label(l)
                        .map(|o| o.id)
                        .ok_or_else(|| format!("no entity labelled {l:?}"))
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let entities = ids(entities)?;
        if let Some(p) = predicate {
            if entities.len() != p.arity() {
                return Err(format!(
                    "{p:?} takes {} entities, got {}",
                    p.arity(),
                    entities.len()
                ));
            }
            if p == Predicate::Gathered && resource.is_none() {
                return Err("gathered goal needs a resource".into());
            }
        }
        Ok(ResolvedGoal {
            predicate,
            entities,
            resource,
            amount: amount.max(1),
            distractors: ids(distractors)?,
        })
    }
}

/// Whether the log shows contact with any distractor.
pub fn distractor_contact(log: &[Interaction], distractors: &[u16]) -> bool {
    log.iter().any(|i| {
        i.verb.is_contact() && i.object.is_some_and(|o| distractors.contains(&o))
    })
}

pub fn predicate_holds(content: &WorldContent, goal: &ResolvedGoal) -> bool {
    let Some(pred) = goal.predicate else {
        return false;
    };
    let scene = content.scene();
    let a = &scene.avatar;
    let e0 = goal.entities.first().copied();
    let e1 = goal.entities.get(1).copied();
    match pred {
        Predicate::MoveForward | Predicate::MoveBackward => {
            let (dx, dy) = a.start_facing.delta();
            let along = (a.pos.x - a.start_pos.x) * dx + (a.pos.y - a.start_pos.y) * dy;
            if pred == Predicate::MoveForward {
                along >= MOVE_CELLS
            } else {
                along <= -MOVE_CELLS
            }
        }
        Predicate::TurnedLeft => a.facing == a.start_facing.left(),
        Predicate::TurnedRight => a.facing == a.start_facing.right(),
        Predicate::LookUp => a.pitch > 0,
        Predicate::LookDown => a.pitch < 0,
        Predicate::Jumped => scene.log.iter().any(|i| i.verb == Verb::Jump),
        Predicate::InventoryOpen => a.menu == Menu::Inventory,
        Predicate::MenuOpen => a.menu == Menu::Pause,
        Predicate::Holding => a.held.is_some() && a.held == e0,
        Predicate::NextTo => e0
            .and_then(|id| scene.object(id))
            .and_then(|o| o.pos)
            .is_some_and(|p| p.manhattan(a.pos) == 1),
        Predicate::Chopped => e0.and_then(|id| scene.object(id)).is_some_and(|o| o.chopped),
        Predicate::Dropped => scene
            .log
            .iter()
            .any(|i| i.verb == Verb::Drop && i.object == e0),
        Predicate::StackedOn | Predicate::Unstacked => {
            let (Some(child), Some(parent), WorldContent::BuildLab(b)) = (e0, e1, content) else {
                return false;
            };
            let attached = b.parent_of(child) == Some(parent);
            (pred == Predicate::StackedOn) == attached
        }
        Predicate::Gathered => match (content, goal.resource) {
            (WorldContent::Harvest(h), Some(r)) => {
                let i = r as usize;
                h.inventory[i].saturating_sub(h.start_inventory[i]) >= goal.amount
            }
            _ => false,
        },
    }
}

/// Ongoing until the goal holds; any distractor contact dominates.
pub fn check_goal(state: &WorldState, goal: &ResolvedGoal, log: &[Interaction]) -> GoalStatus {
    if distractor_contact(log, &goal.distractors) {
        GoalStatus::DistractorFailure
    } else if predicate_holds(&state.content, goal) {
        GoalStatus::Success
    } else {
        GoalStatus::Ongoing
    }
}
