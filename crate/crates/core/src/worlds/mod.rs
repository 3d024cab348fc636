//! The three concrete worlds, their layouts, goal checks and the task registry.

mod buildlab;
mod goal;
mod grid;
mod harvest;
mod layouts;
mod playroom;
mod registry;

pub use buildlab::{Attachment, BuildLabWorld};
pub use goal::{
    check_goal, distractor_contact, predicate_holds, GoalStatus, Predicate, ResolvedGoal, MOVE_CELLS,
};
pub use grid::{
    object_symbol, Avatar, ControlOutcome, Dir, Interaction, Menu, Object, ObjectKind, Pos, Scene,
    Tile, Verb, AVATAR_COL, AVATAR_ROW, HUD_ROW, JUMP_TICKS, REACH, TURN_THRESHOLD,
};
pub use harvest::{tool_name, HarvestWorld, Resource, CRITTER_PERIOD};
pub use layouts::{layout, layouts, Item, Layout, Placement, AVATAR_CLEARANCE, MAP_SIZE};
pub use playroom::PlayRoomWorld;
pub use registry::{
    generic_indices, load_registry, registry_from_toml, registry_list, registry_to_toml,
    save_registry, RegistryError, REGISTRY_VERSION,
};

use crate::codec::{DecodeError, Reader, Writer};
use crate::worldcore::{symbol, ActionEvent, Cell, Frame, TextEvent, WorldId, WorldRng, WorldState};

/// Per-world state behind a [`WorldState`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorldContent {
    PlayRoom(PlayRoomWorld),
    BuildLab(BuildLabWorld),
    Harvest(HarvestWorld),
}

impl WorldContent {
    pub fn world_id(&self) -> WorldId {
        match self {
            WorldContent::PlayRoom(_) => WorldId::PlayRoom,
            WorldContent::BuildLab(_) => WorldId::BuildLab,
            WorldContent::Harvest(_) => WorldId::Harvest,
        }
    }

    pub fn scene(&self) -> &Scene {
        match self {
            WorldContent::PlayRoom(w) => &w.scene,
            WorldContent::BuildLab(w) => &w.scene,
            WorldContent::Harvest(w) => &w.scene,
        }
    }

    pub fn scene_mut(&mut self) -> &mut Scene {
        match self {
            WorldContent::PlayRoom(w) => &mut w.scene,
            WorldContent::BuildLab(w) => &mut w.scene,
            WorldContent::Harvest(w) => &mut w.scene,
        }
    }

    /// One tick of world rules. Events and log entries are stamped `next_tick`.
    pub fn apply(
        &mut self,
        action: &ActionEvent,
        next_tick: u64,
        rng: &mut WorldRng,
        events: &mut Vec<TextEvent>,
    ) {
        let out = self.scene_mut().apply_controls(action, next_tick, events);
        if let Some(target) = out.primary {
            self.primary(target, next_tick, events);
        }
        if let WorldContent::Harvest(h) = self {
            if out.secondary_clicked {
                h.secondary(out.secondary, next_tick, events);
            }
            h.passive(next_tick, rng);
        }
    }

    fn primary(&mut self, target: Pos, tick: u64, events: &mut Vec<TextEvent>) {
        match self {
            WorldContent::PlayRoom(w) => w.primary(target, tick, events),
            WorldContent::BuildLab(w) => w.primary(target, tick, events),
            WorldContent::Harvest(w) => w.primary(target, tick, events),
        }
    }

    pub fn render(&self, events: &[TextEvent]) -> Frame {
        let mut frame = match self {
            WorldContent::BuildLab(b) => b.scene.render_view(|p| {
                let top = b.top_at(p)?;
                let o = b.scene.object(top)?;
                Some(Cell::new(object_symbol(o, b.height_of(top)), o.color))
            }),
            _ => {
                let scene = self.scene();
                scene.render_view(|p| {
                    scene
                        .objects_at(p)
                        .next()
                        .map(|o| Cell::new(object_symbol(o, 1), o.color))
                })
            }
        };
        if let WorldContent::Harvest(h) = self {
            use crate::worldcore::color;
            let tool = [symbol::TOOL_HAND, symbol::TOOL_AXE, symbol::TOOL_PICK, symbol::TOOL_VISOR]
                [usize::from(h.scene.avatar.hotbar.clamp(1, 4) - 1)];
            frame.set(HUD_ROW, 4, Cell::new(tool, color::HUD));
            for (i, &n) in h.inventory.iter().enumerate() {
                frame.set(HUD_ROW, 5 + i, Cell::new(symbol::DIGIT_0 + n.min(9) as u8, color::HUD));
            }
        }
        for e in events {
            frame.push_overlay(&e.text);
        }
        frame
    }

    pub fn encode(&self, w: &mut Writer) {
        match self {
            WorldContent::PlayRoom(x) => x.encode(w),
            WorldContent::BuildLab(x) => x.encode(w),
            WorldContent::Harvest(x) => x.encode(w),
        }
    }

    pub fn decode(world: WorldId, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let content = match world {
            WorldId::PlayRoom => WorldContent::PlayRoom(PlayRoomWorld::decode(r)?),
            WorldId::BuildLab => WorldContent::BuildLab(BuildLabWorld::decode(r)?),
            WorldId::Harvest => WorldContent::Harvest(HarvestWorld::decode(r)?),
        };
        let s = content.scene();
        if let Some(h) = s.avatar.held {
            if s.object(h).is_none_or(|o| o.pos.is_some()) {
                return Err(r.invalid(format!("held object {h} missing or placed")));
            }
        }
        if s.objects.iter().filter_map(|o| o.pos).any(|p| !s.in_bounds(p)) {
            return Err(r.invalid("object out of bounds"));
        }
        Ok(content)
    }
}

/// Left-click interaction on `target` outside the tick loop. Out-of-reach targets are
/// logged as an empty touch and change nothing else.
pub fn interact(state: &mut WorldState, target: Pos) -> Vec<TextEvent> {
    let tick = state.tick;
    let mut events = Vec::new();
    let scene = state.content.scene_mut();
    if !scene.in_reach(target) {
        scene.record(tick, Verb::Touch, None, None);
        return events;
    }
    state.content.primary(target, tick, &mut events);
    events
}
