//! Named initial-state layouts. A layout is a recipe; `instantiate(seed)` places rooms,
//! furniture, objects and the avatar by rejection sampling.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::buildlab::{Attachment, BuildLabWorld};
use super::grid::{Avatar, Dir, Object, ObjectKind, Pos, Scene, Tile};
use super::harvest::HarvestWorld;
use super::playroom::PlayRoomWorld;
use super::WorldContent;
use crate::codec::fnv1a64;
use crate::worldcore::{color, WorldId, WorldRng, WorldState};

pub const MAP_SIZE: i16 = 10;
/// Free cells required on both sides of the avatar along its facing.
pub const AVATAR_CLEARANCE: i16 = 3;
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Floor,
    /// On the cutting board tile.
    Board,
    /// In the avatar's hand.
    Held,
    /// Attached on top of the named block.
    On(&'static str),
}

#[derive(Debug, Clone)]
pub struct Item {
    pub label: &'static str,
    pub kind: ObjectKind,
    pub color: u8,
    pub placement: Placement,
    pub quantity: u32,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub reference: &'static str,
    pub world: WorldId,
    /// Number of rooms, 1..=4 (PlayRoom only).
    pub rooms: u8,
    pub board: bool,
    pub bench: bool,
    pub items: Vec<Item>,
    pub start_inventory: [u32; 5],
}

fn item(label: &'static str, kind: ObjectKind, color: u8) -> Item {
    let quantity = match kind {
        ObjectKind::CarbonDeposit => 25,
        k if k.is_resource() => 5,
        _ => 0,
    };
    Item {
        label,
        kind,
        color,
        placement: Placement::Floor,
        quantity,
    }
}

fn placed(mut it: Item, placement: Placement) -> Item {
    it.placement = placement;
    it
}

impl Layout {
    fn new(reference: &'static str, world: WorldId, items: Vec<Item>) -> Layout {
        Layout {
            reference,
            world,
            rooms: 1,
            board: false,
            bench: false,
            items,
            start_inventory: [0; 5],
        }
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.items.iter().any(|i| i.label == label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.items.iter().map(|i| i.label)
    }

    /// Deterministic in `(reference, seed)`.
    pub fn instantiate(&self, seed: u64) -> WorldState {
        let mix = fnv1a64(self.reference.as_bytes()) ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(mix);
        for _ in 0..MAX_ATTEMPTS {
            if let Some(content) = self.try_build(&mut rng) {
                return WorldState {
                    world_id: self.world,
                    tick: 0,
                    rng: WorldRng::from_seed_u64(mix),
                    content,
                };
            }
        }
        panic!("layout {} could not be placed", self.reference)
    }

    fn try_build(&self, rng: &mut ChaCha8Rng) -> Option<WorldContent> {
        let floor = match self.world {
            WorldId::PlayRoom => color::GRAY,
            WorldId::BuildLab => color::SAND,
            WorldId::Harvest => color::OLIVE,
        };
        let mut scene = Scene::new(MAP_SIZE, MAP_SIZE, floor, Avatar::new(Pos::new(0, 0), Dir::North));
        let rooms = partition(&mut scene, self.rooms, rng);
        let interior = |rng: &mut ChaCha8Rng| Pos::new(rng.gen_range(1..MAP_SIZE - 1), rng.gen_range(1..MAP_SIZE - 1));

        let mut fixtures = Vec::new();
        for (wanted, tile) in [(self.board, Tile::Board), (self.bench, Tile::Bench)] {
            if wanted {
                let p = interior(rng);
                if scene.tile(p) != Some(Tile::Floor) || fixtures.iter().any(|&(q, _): &(Pos, Tile)| q.manhattan(p) < 2) {
                    return None;
                }
                scene.set_tile(p, tile);
                fixtures.push((p, tile));
            }
        }

        let apos = interior(rng);
        let facing = Dir::ALL[rng.gen_range(0..4)];
        let mut lane = vec![apos];
        for n in 1..=AVATAR_CLEARANCE {
            lane.push(apos.offset(facing, n));
            lane.push(apos.offset(facing.back(), n));
        }
        if lane.iter().any(|&p| scene.tile(p) != Some(Tile::Floor)) {
            return None;
        }
        if fixtures.iter().any(|&(p, _)| p.manhattan(apos) < 2) {
            return None;
        }
        scene.avatar = Avatar::new(apos, facing);

        let mut edges = Vec::new();
        for (idx, it) in self.items.iter().enumerate() {
            let id = idx as u16 + 1;
            let pos = match it.placement {
                Placement::Floor => {
                    let p = interior(rng);
                    let clash = scene.tile(p) != Some(Tile::Floor)
                        || lane.contains(&p)
                        || p.manhattan(apos) < 2
                        || scene
                            .objects
                            .iter()
                            .filter_map(|o| o.pos)
                            .chain(fixtures.iter().map(|f| f.0))
                            .any(|q| q.manhattan(p) < 2);
                    if clash {
                        return None;
                    }
                    Some(p)
                }
                Placement::Board => Some(fixtures.iter().find(|f| f.1 == Tile::Board)?.0),
                Placement::Held => {
                    scene.avatar.held = Some(id);
                    None
                }
                Placement::On(parent) => {
                    let parent = scene.find_label(parent)?;
                    edges.push(Attachment {
                        child: id,
                        parent: parent.id,
                    });
                    parent.pos
                }
            };
            scene.objects.push(Object {
                id,
                label: it.label.to_string(),
                kind: it.kind,
                color: it.color,
                pos,
                chopped: false,
                quantity: it.quantity,
            });
        }

        // Everything must be approachable from the start cell.
        let field = scene.distance_field(&[apos]);
        let targets = scene
            .objects
            .iter()
            .filter_map(|o| o.pos)
            .chain(fixtures.iter().map(|f| f.0));
        for p in targets {
            let ok = Dir::ALL
                .iter()
                .any(|&d| scene.dist_at(&field, p.offset(d, 1)).is_some());
            if !ok {
                return None;
            }
        }

        Some(match self.world {
            WorldId::PlayRoom => WorldContent::PlayRoom(PlayRoomWorld { scene, rooms }),
            WorldId::BuildLab => WorldContent::BuildLab(BuildLabWorld { scene, edges }),
            WorldId::Harvest => WorldContent::Harvest(HarvestWorld {
                scene,
                inventory: self.start_inventory,
                start_inventory: self.start_inventory,
            }),
        })
    }
}

/// Splits the interior with partition walls and doorways. Returns the room rectangles.
fn partition(scene: &mut Scene, rooms: u8, rng: &mut ChaCha8Rng) -> Vec<(Pos, Pos)> {
    let lo = 1;
    let hi = MAP_SIZE - 2;
    if rooms <= 1 {
        return vec![(Pos::new(lo, lo), Pos::new(hi, hi))];
    }
    let vx = rng.gen_range(4..=5);
    let hy = rng.gen_range(4..=5);
    let split_h = rooms >= 3;
    // With a horizontal wall the vertical one has two segments; each gets a doorway.
    let v_segments: Vec<(i16, i16)> = if split_h { vec![(lo, hy - 1), (hy + 1, hi)] } else { vec![(lo, hi)] };
    for y in lo..=hi {
        scene.set_tile(Pos::new(vx, y), Tile::Wall);
    }
    for (a, b) in v_segments {
        let door = rng.gen_range(a..=b);
        scene.set_tile(Pos::new(vx, door), Tile::Floor);
    }
    let mut out = Vec::new();
    if split_h {
        // Three rooms: only the left half is split. Four: both halves.
        let spans: Vec<(i16, i16)> = if rooms == 3 { vec![(lo, vx - 1)] } else { vec![(lo, vx - 1), (vx + 1, hi)] };
        for &(a, b) in &spans {
            for x in a..=b {
                scene.set_tile(Pos::new(x, hy), Tile::Wall);
            }
            let door = rng.gen_range(a..=b);
            scene.set_tile(Pos::new(door, hy), Tile::Floor);
            out.push((Pos::new(a, lo), Pos::new(b, hy - 1)));
            out.push((Pos::new(a, hy + 1), Pos::new(b, hi)));
        }
        if rooms == 3 {
            out.push((Pos::new(vx + 1, lo), Pos::new(hi, hi)));
        }
        scene.set_tile(Pos::new(vx, hy), Tile::Wall);
    } else {
        out.push((Pos::new(lo, lo), Pos::new(vx - 1, hi)));
        out.push((Pos::new(vx + 1, lo), Pos::new(hi, hi)));
    }
    out
}

fn build_layouts() -> Vec<Layout> {
    use ObjectKind::*;
    use WorldId::*;
    let c = |k, col: u8, label| item(label, k, col);
    let mut v = Vec::new();

    let mut l = Layout::new(
        "playroom/two_rooms_a",
        PlayRoom,
        vec![
            c(Cube, color::GREEN, "green_cube"),
            c(Cube, color::BLUE, "blue_cube"),
            c(Ball, color::RED, "red_ball"),
            c(Ball, color::YELLOW, "yellow_ball"),
        ],
    );
    l.rooms = 2;
    v.push(l);
    let mut l = Layout::new(
        "playroom/two_rooms_b",
        PlayRoom,
        vec![
            c(Cube, color::RED, "red_cube"),
            c(Cube, color::YELLOW, "yellow_cube"),
            c(Ball, color::GREEN, "green_ball"),
            c(Ball, color::BLUE, "blue_ball"),
        ],
    );
    l.rooms = 2;
    v.push(l);
    let mut l = Layout::new(
        "playroom/four_rooms",
        PlayRoom,
        vec![
            c(Cube, color::WHITE, "white_cube"),
            c(Cube, color::RED, "red_cube"),
            c(Ball, color::BLUE, "blue_ball"),
            c(Ball, color::GREEN, "green_ball"),
        ],
    );
    l.rooms = 4;
    v.push(l);
    let mut l = Layout::new(
        "playroom/kitchen_knife",
        PlayRoom,
        vec![
            placed(c(Knife, color::WHITE, "knife"), Placement::Held),
            placed(c(Carrot, color::ORANGE, "carrot"), Placement::Board),
            c(Carrot, color::ORANGE, "spare_carrot"),
            c(Cube, color::GREEN, "green_cube"),
            c(Ball, color::BLUE, "blue_ball"),
        ],
    );
    l.board = true;
    v.push(l);
    let mut l = Layout::new(
        "playroom/kitchen_empty",
        PlayRoom,
        vec![
            c(Knife, color::WHITE, "knife"),
            placed(c(Carrot, color::ORANGE, "carrot"), Placement::Board),
            c(Cube, color::RED, "red_cube"),
            c(Ball, color::YELLOW, "yellow_ball"),
        ],
    );
    l.board = true;
    l.rooms = 3;
    v.push(l);

    v.push(Layout::new(
        "buildlab/holding_red",
        BuildLab,
        vec![
            placed(c(SmallBlock, color::RED, "red_block"), Placement::Held),
            c(SmallBlock, color::BLUE, "blue_block"),
            c(SmallBlock, color::GREEN, "green_block"),
            c(SmallBlock, color::YELLOW, "yellow_block"),
        ],
    ));
    v.push(Layout::new(
        "buildlab/loose_blocks",
        BuildLab,
        vec![
            c(SmallBlock, color::RED, "red_block"),
            c(SmallBlock, color::BLUE, "blue_block"),
            c(LargeBlock, color::GREEN, "green_block"),
            c(LargeBlock, color::YELLOW, "yellow_block"),
        ],
    ));
    v.push(Layout::new(
        "buildlab/connector",
        BuildLab,
        vec![
            c(Connector, color::WHITE, "connector"),
            c(LargeBlock, color::BLUE, "large_block"),
            c(SmallBlock, color::GREEN, "small_block"),
            c(SmallBlock, color::RED, "red_block"),
        ],
    ));
    v.push(Layout::new(
        "buildlab/tower",
        BuildLab,
        vec![
            c(LargeBlock, color::PURPLE, "tower_base"),
            placed(c(SmallBlock, color::PURPLE, "tower_mid"), Placement::On("tower_base")),
            c(SmallBlock, color::YELLOW, "yellow_block"),
            c(SmallBlock, color::RED, "red_block"),
        ],
    ));
    v.push(Layout::new(
        "buildlab/stacked",
        BuildLab,
        vec![
            c(LargeBlock, color::BLUE, "blue_block"),
            placed(c(SmallBlock, color::RED, "red_block"), Placement::On("blue_block")),
            c(SmallBlock, color::GREEN, "green_block"),
            c(SmallBlock, color::YELLOW, "yellow_block"),
        ],
    ));

    v.push(Layout::new(
        "harvest/glade",
        Harvest,
        vec![
            c(Tree, color::GREEN, "tree"),
            c(Rock, color::GRAY, "rock"),
            c(BerryBush, color::RED, "berry_bush"),
            c(CarbonDeposit, color::DARK, "carbon_deposit"),
        ],
    ));
    let mut l = Layout::new(
        "harvest/workshop",
        Harvest,
        vec![
            c(Tree, color::GREEN, "tree"),
            c(Rock, color::GRAY, "rock"),
            c(BerryBush, color::RED, "berry_bush"),
        ],
    );
    l.bench = true;
    l.start_inventory = [1, 0, 0, 0, 0];
    v.push(l);
    v.push(Layout::new(
        "harvest/quarry",
        Harvest,
        vec![
            c(Rock, color::GRAY, "rock"),
            c(CarbonDeposit, color::DARK, "carbon_deposit"),
            c(Tree, color::GREEN, "tree"),
        ],
    ));
    v.push(Layout::new(
        "harvest/orchard",
        Harvest,
        vec![
            c(BerryBush, color::RED, "berry_bush"),
            c(Tree, color::GREEN, "tree"),
            c(Rock, color::GRAY, "rock"),
            c(Critter, color::BROWN, "critter"),
        ],
    ));
    let mut l = Layout::new(
        "harvest/camp",
        Harvest,
        vec![
            c(Tree, color::GREEN, "tree"),
            c(CarbonDeposit, color::DARK, "carbon_deposit"),
            c(BerryBush, color::RED, "berry_bush"),
            c(Critter, color::BROWN, "critter"),
        ],
    );
    l.bench = true;
    v.push(l);
    v
}

pub fn layouts() -> &'static [Layout] {
    static LAYOUTS: OnceLock<Vec<Layout>> = OnceLock::new();
    LAYOUTS.get_or_init(build_layouts)
}

pub fn layout(reference: &str) -> Option<&'static Layout> {
    layouts().iter().find(|l| l.reference == reference)
}
