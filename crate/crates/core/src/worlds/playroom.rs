//! A small procedurally-furnished house: rooms, colored toys, a knife and a cutting board.

use super::grid::{Pos, Scene, Tile, Verb};
use crate::codec::{DecodeError, Reader, Writer};
use crate::worldcore::TextEvent;

use super::grid::ObjectKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlayRoomWorld {
    pub scene: Scene,
    /// Inclusive `(min, max)` corners of each room.
    pub rooms: Vec<(Pos, Pos)>,
}

impl PlayRoomWorld {
    pub(crate) fn primary(&mut self, target: Pos, tick: u64, events: &mut Vec<TextEvent>) {
        let scene = &mut self.scene;
        let Some(id) = scene.objects_at(target).map(|o| o.id).last() else {
            return;
        };
        let held_kind = scene
            .avatar
            .held
            .and_then(|h| scene.object(h))
            .map(|o| o.kind);
        let obj = scene.object(id).expect("object at target");
        let on_board = scene.tile(target) == Some(Tile::Board);
        if obj.kind == ObjectKind::Carrot
            && !obj.chopped
            && on_board
            && held_kind == Some(ObjectKind::Knife)
        {
            let knife = scene.avatar.held;
            scene.object_mut(id).expect("exists").chopped = true;
            scene.record(tick, Verb::Chop, Some(id), knife);
            events.push(TextEvent::new(tick, "Carrot chopped"));
        } else if scene.avatar.held.is_none() && obj.kind.is_portable() {
            let name = obj.display_name();
            scene.object_mut(id).expect("exists").pos = None;
            scene.avatar.held = Some(id);
            scene.record(tick, Verb::PickUp, Some(id), None);
            events.push(TextEvent::new(tick, format!("Picked up {name}")));
        } else {
            scene.record(tick, Verb::Touch, Some(id), None);
        }
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        self.scene.encode(w);
        w.seq(&self.rooms, |w, (a, b)| {
            for v in [a.x, a.y, b.x, b.y] {
                w.u16(v as u16);
            }
        });
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let scene = Scene::decode(r)?;
        let rooms = r.seq(|r| {
            let v = [r.u16()?, r.u16()?, r.u16()?, r.u16()?].map(|x| x as i16);
            Ok((Pos::new(v[0], v[1]), Pos::new(v[2], v[3])))
        })?;
        Ok(PlayRoomWorld { scene, rooms })
    }
}
