//! Construction world: blocks with top/bottom connector points that stack into assemblies.

use super::grid::{Pos, Scene, Verb};
use crate::codec::{DecodeError, Reader, Writer};
use crate::worldcore::TextEvent;

/// `child`'s bottom connector is attached to `parent`'s top connector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Attachment {
    pub child: u16,
    pub parent: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildLabWorld {
    pub scene: Scene,
    pub edges: Vec<Attachment>,
}

impl BuildLabWorld {
    pub fn parent_of(&self, id: u16) -> Option<u16> {
        self.edges.iter().find(|e| e.child == id).map(|e| e.parent)
    }

    pub fn has_child(&self, id: u16) -> bool {
        self.edges.iter().any(|e| e.parent == id)
    }

    /// The block at `p` whose top connector is free.
    pub fn top_at(&self, p: Pos) -> Option<u16> {
        self.scene
            .objects_at(p)
            .map(|o| o.id)
            .find(|&id| !self.has_child(id))
    }

    /// 1 for a block resting on the floor.
    pub fn height_of(&self, id: u16) -> usize {
        let mut h = 1;
        let mut cur = id;
        while let Some(p) = self.parent_of(cur) {
            h += 1;
            cur = p;
            if h > self.edges.len() + 1 {
                break;
            }
        }
        h
    }

    /// Attaches `child` onto `parent`. Fails if either connector is taken or the
    /// edge would close a cycle.
    pub fn attach(&mut self, child: u16, parent: u16) -> bool {
        if child == parent || self.parent_of(child).is_some() || self.has_child(parent) {
            return false;
        }
        let mut cur = Some(parent);
        while let Some(c) = cur {
            if c == child {
                return false;
            }
            cur = self.parent_of(c);
        }
        let Some(ppos) = self.scene.object(parent).and_then(|o| o.pos) else {
            return false;
        };
        if let Some(o) = self.scene.object_mut(child) {
            o.pos = Some(ppos);
        }
        self.edges.push(Attachment { child, parent });
        true
    }

    /// Removes the edge under `child`. Returns the former parent.
    pub fn detach(&mut self, child: u16) -> Option<u16> {
        let i = self.edges.iter().position(|e| e.child == child)?;
        Some(self.edges.remove(i).parent)
    }

    pub(crate) fn primary(&mut self, target: Pos, tick: u64, events: &mut Vec<TextEvent>) {
        let Some(top) = self.top_at(target) else {
            return;
        };
        match self.scene.avatar.held {
            Some(h) if self.scene.object(h).is_some_and(|o| o.kind.is_block()) => {
                let held_name = self.scene.object(h).expect("held").display_name();
                let top_name = self.scene.object(top).expect("top").display_name();
                if self.attach(h, top) {
                    self.scene.avatar.held = None;
                    self.scene.record(tick, Verb::Attach, Some(top), Some(h));
                    events.push(TextEvent::new(tick, format!("Attached {held_name} to {top_name}")));
                } else {
                    self.scene.record(tick, Verb::Touch, Some(top), None);
                }
            }
            Some(_) => self.scene.record(tick, Verb::Touch, Some(top), None),
            None => {
                let name = self.scene.object(top).expect("top").display_name();
                let former = self.detach(top);
                self.scene.object_mut(top).expect("top").pos = None;
                self.scene.avatar.held = Some(top);
                match former {
                    Some(p) => {
                        self.scene.record(tick, Verb::Detach, Some(top), Some(p));
                        events.push(TextEvent::new(tick, format!("Detached {name}")));
                    }
                    None => {
                        self.scene.record(tick, Verb::PickUp, Some(top), None);
                        events.push(TextEvent::new(tick, format!("Picked up {name}")));
                    }
                }
            }
        }
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        self.scene.encode(w);
        w.seq(&self.edges, |w, e| {
            w.u16(e.child);
            w.u16(e.parent);
        });
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let scene = Scene::decode(r)?;
        let edges = r.seq(|r| {
            Ok(Attachment {
                child: r.u16()?,
                parent: r.u16()?,
            })
        })?;
        Ok(BuildLabWorld { scene, edges })
    }
}
