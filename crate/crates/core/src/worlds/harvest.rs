//! Survival-style gathering world. Success is read off its on-screen text, like a commercial game.

use serde::{Deserialize, Serialize};

use super::grid::{ObjectKind, Pos, Scene, Tile, Verb};
use crate::codec::{DecodeError, Reader, Writer};
use crate::worldcore::{TextEvent, WorldRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resource {
    Wood,
    Stone,
    Berries,
    Carbon,
    Plank,
}

impl Resource {
    pub const ALL: [Resource; 5] = [
        Resource::Wood,
        Resource::Stone,
        Resource::Berries,
        Resource::Carbon,
        Resource::Plank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Resource::Wood => "Wood",
            Resource::Stone => "Stone",
            Resource::Berries => "Berries",
            Resource::Carbon => "Carbon",
            Resource::Plank => "Plank",
        }
    }

    pub fn parse(s: &str) -> Option<Resource> {
        Resource::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
    }

    /// Node kind, tool slot and yield per harvest.
    pub fn source(self) -> Option<(ObjectKind, u8, u32)> {
        match self {
            Resource::Wood => Some((ObjectKind::Tree, 2, 1)),
            Resource::Stone => Some((ObjectKind::Rock, 3, 1)),
            Resource::Berries => Some((ObjectKind::BerryBush, 1, 1)),
            Resource::Carbon => Some((ObjectKind::CarbonDeposit, 3, 5)),
            Resource::Plank => None,
        }
    }

    pub fn from_node(kind: ObjectKind) -> Option<Resource> {
        Resource::ALL
            .into_iter()
            .find(|r| r.source().is_some_and(|(k, _, _)| k == kind))
    }
}

pub fn tool_name(slot: u8) -> &'static str {
    match slot {
        2 => "axe",
        3 => "pick",
        4 => "visor",
        _ => "hand",
    }
}

pub const CRITTER_PERIOD: u64 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarvestWorld {
    pub scene: Scene,
    pub inventory: [u32; 5],
    pub start_inventory: [u32; 5],
}

impl HarvestWorld {
    pub fn count(&self, r: Resource) -> u32 {
        self.inventory[r as usize]
    }

    /// Node quantities plus raw inventory; constant under harvesting.
    pub fn resource_total(&self) -> u64 {
        let nodes: u64 = self
            .scene
            .objects
            .iter()
            .filter(|o| o.kind.is_resource())
            .map(|o| u64::from(o.quantity))
            .sum();
        nodes + self.inventory[..4].iter().map(|&v| u64::from(v)).sum::<u64>()
    }

    pub(crate) fn primary(&mut self, target: Pos, tick: u64, events: &mut Vec<TextEvent>) {
        if self.scene.tile(target) == Some(Tile::Bench) {
            if self.inventory[Resource::Wood as usize] >= 1 {
                self.inventory[Resource::Wood as usize] -= 1;
                self.inventory[Resource::Plank as usize] += 1;
                self.scene.record(tick, Verb::Craft, None, None);
                events.push(TextEvent::new(tick, "Plank +1"));
            } else {
                events.push(TextEvent::new(tick, "Need wood"));
            }
            return;
        }
        let Some(id) = self.scene.objects_at(target).map(|o| o.id).next() else {
            return;
        };
        let obj = self.scene.object(id).expect("object at target").clone();
        let Some(res) = Resource::from_node(obj.kind) else {
            self.scene.record(tick, Verb::Touch, Some(id), None);
            return;
        };
        let (_, slot, yield_per) = res.source().expect("node resources have a source");
        if obj.quantity == 0 {
            self.scene.record(tick, Verb::Touch, Some(id), None);
            events.push(TextEvent::new(tick, format!("{} depleted", res.name())));
        } else if self.scene.avatar.hotbar != slot {
            self.scene.record(tick, Verb::Touch, Some(id), None);
            events.push(TextEvent::new(tick, format!("Need {}", tool_name(slot))));
        } else {
            let amount = yield_per.min(obj.quantity);
            self.scene.object_mut(id).expect("exists").quantity -= amount;
            self.inventory[res as usize] += amount;
            self.scene.record(tick, Verb::Harvest, Some(id), None);
            events.push(TextEvent::new(tick, format!("{} +{amount}", res.name())));
        }
    }

    pub(crate) fn secondary(&mut self, target: Option<Pos>, tick: u64, events: &mut Vec<TextEvent>) {
        if self.scene.avatar.hotbar != 4 {
            return;
        }
        let seen = target.and_then(|p| self.scene.objects_at(p).next().map(|o| (o.id, o.kind.name())));
        let name = seen.map(|(_, n)| n).unwrap_or("nothing");
        events.push(TextEvent::new(tick, format!("Visor scan: {name}")));
        self.scene.record(tick, Verb::Scan, seen.map(|(id, _)| id), None);
    }

    /// Critters wander one cell every few ticks.
    pub(crate) fn passive(&mut self, tick: u64, rng: &mut WorldRng) {
        if tick % CRITTER_PERIOD != 0 {
            return;
        }
        let critters: Vec<u16> = self
            .scene
            .objects
            .iter()
            .filter(|o| o.kind == ObjectKind::Critter && o.pos.is_some())
            .map(|o| o.id)
            .collect();
        for id in critters {
            let choice = rng.below(5);
            let Some(pos) = self.scene.object(id).and_then(|o| o.pos) else {
                continue;
            };
            if let Some(&d) = super::grid::Dir::ALL.get(choice as usize) {
                let next = pos.offset(d, 1);
                if self.scene.walkable(next) {
                    self.scene.object_mut(id).expect("exists").pos = Some(next);
                }
            }
        }
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        self.scene.encode(w);
        for v in self.inventory.iter().chain(&self.start_inventory) {
            w.u32(*v);
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let scene = Scene::decode(r)?;
        let mut inv = [0u32; 10];
        for v in &mut inv {
            *v = r.u32()?;
        }
        let mut inventory = [0u32; 5];
        let mut start_inventory = [0u32; 5];
        inventory.copy_from_slice(&inv[..5]);
        start_inventory.copy_from_slice(&inv[5..]);
        Ok(HarvestWorld {
            scene,
            inventory,
            start_inventory,
        })
    }
}
