//! Grid geometry, the avatar, objects and the egocentric renderer shared by all worlds.

use std::collections::VecDeque;

use crate::codec::{DecodeError, Reader, Writer};
use crate::worldcore::{color, symbol, ActionEvent, Cell, Frame, Key, KeySet, TextEvent, FRAME_WIDTH};

/// Frame row/column the avatar is drawn at. Row 15 is the HUD.
pub const AVATAR_ROW: usize = 7;
pub const AVATAR_COL: usize = 7;
pub const HUD_ROW: usize = 15;
/// Interaction reach in cells.
pub const REACH: i16 = 2;
pub const JUMP_TICKS: u8 = 3;
/// Accumulated mouse buckets needed for one 90° turn or one pitch step.
pub const TURN_THRESHOLD: i8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub x: i16,
    pub y: i16,
}

impl Pos {
    pub const fn new(x: i16, y: i16) -> Self {
        Pos { x, y }
    }

    pub fn offset(self, d: Dir, n: i16) -> Pos {
        let (dx, dy) = d.delta();
        Pos::new(self.x + dx * n, self.y + dy * n)
    }

    pub fn manhattan(self, o: Pos) -> i16 {
        (self.x - o.x).abs() + (self.y - o.y).abs()
    }

    fn encode(self, w: &mut Writer) {
        w.u16(self.x as u16);
        w.u16(self.y as u16);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Pos::new(r.u16()? as i16, r.u16()? as i16))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    North,
    East,
    South,
    West,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::North, Dir::East, Dir::South, Dir::West];

    pub fn delta(self) -> (i16, i16) {
        match self {
            Dir::North => (0, -1),
            Dir::East => (1, 0),
            Dir::South => (0, 1),
            Dir::West => (-1, 0),
        }
    }

    pub fn left(self) -> Dir {
        Dir::ALL[(self as usize + 3) % 4]
    }

    pub fn right(self) -> Dir {
        Dir::ALL[(self as usize + 1) % 4]
    }

    pub fn back(self) -> Dir {
        Dir::ALL[(self as usize + 2) % 4]
    }

    fn from_code(c: u8) -> Option<Dir> {
        Dir::ALL.get(usize::from(c)).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tile {
    Floor,
    Wall,
    /// Cutting board: holds an object, cannot be walked on.
    Board,
    /// Crafting bench: interactive, cannot be walked on.
    Bench,
}

impl Tile {
    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Tile> {
        [Tile::Floor, Tile::Wall, Tile::Board, Tile::Bench]
            .get(usize::from(c))
            .copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectKind {
    Cube,
    Ball,
    Knife,
    Carrot,
    SmallBlock,
    LargeBlock,
    Connector,
    Tree,
    Rock,
    BerryBush,
    CarbonDeposit,
    Critter,
}

impl ObjectKind {
    const ALL: [ObjectKind; 12] = [
        ObjectKind::Cube,
        ObjectKind::Ball,
        ObjectKind::Knife,
        ObjectKind::Carrot,
        ObjectKind::SmallBlock,
        ObjectKind::LargeBlock,
        ObjectKind::Connector,
        ObjectKind::Tree,
        ObjectKind::Rock,
        ObjectKind::BerryBush,
        ObjectKind::CarbonDeposit,
        ObjectKind::Critter,
    ];

    pub fn is_block(self) -> bool {
        matches!(
            self,
            ObjectKind::SmallBlock | ObjectKind::LargeBlock | ObjectKind::Connector
        )
    }

    pub fn is_resource(self) -> bool {
        matches!(
            self,
            ObjectKind::Tree | ObjectKind::Rock | ObjectKind::BerryBush | ObjectKind::CarbonDeposit
        )
    }

    pub fn is_portable(self) -> bool {
        matches!(
            self,
            ObjectKind::Cube | ObjectKind::Ball | ObjectKind::Knife | ObjectKind::Carrot
        ) || self.is_block()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Cube => "cube",
            ObjectKind::Ball => "ball",
            ObjectKind::Knife => "knife",
            ObjectKind::Carrot => "carrot",
            ObjectKind::SmallBlock => "small block",
            ObjectKind::LargeBlock => "large block",
            ObjectKind::Connector => "connector",
            ObjectKind::Tree => "tree",
            ObjectKind::Rock => "rock",
            ObjectKind::BerryBush => "berry bush",
            ObjectKind::CarbonDeposit => "carbon deposit",
            ObjectKind::Critter => "critter",
        }
    }

    fn base_symbol(self) -> u8 {
        match self {
            ObjectKind::Cube => symbol::CUBE,
            ObjectKind::Ball => symbol::BALL,
            ObjectKind::Knife => symbol::KNIFE,
            ObjectKind::Carrot => symbol::CARROT,
            ObjectKind::SmallBlock => symbol::SMALL_BLOCK,
            ObjectKind::LargeBlock => symbol::LARGE_BLOCK,
            ObjectKind::Connector => symbol::CONNECTOR,
            ObjectKind::Tree => symbol::TREE,
            ObjectKind::Rock => symbol::ROCK,
            ObjectKind::BerryBush => symbol::BERRY_BUSH,
            ObjectKind::CarbonDeposit => symbol::CARBON,
            ObjectKind::Critter => symbol::CRITTER,
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<ObjectKind> {
        ObjectKind::ALL.get(usize::from(c)).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Object {
    pub id: u16,
    pub label: String,
    pub kind: ObjectKind,
    pub color: u8,
    /// `None` while held.
    pub pos: Option<Pos>,
    pub chopped: bool,
    /// Remaining yield for resource nodes.
    pub quantity: u32,
}

impl Object {
    pub fn display_name(&self) -> String {
        self.label.replace('_', " ")
    }

    fn encode(&self, w: &mut Writer) {
        w.u16(self.id);
        w.str(&self.label);
        w.u8(self.kind.code());
        w.u8(self.color);
        match self.pos {
            Some(p) => {
                w.u8(1);
                p.encode(w);
            }
            None => w.u8(0),
        }
        w.bool(self.chopped);
        w.u32(self.quantity);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let id = r.u16()?;
        let label = r.string()?;
        let kind_code = r.u8()?;
        let kind =
            ObjectKind::from_code(kind_code).ok_or_else(|| r.invalid(format!("object kind {kind_code}")))?;
        let color = r.u8()?;
        let pos = match r.u8()? {
            0 => None,
            1 => Some(Pos::decode(r)?),
            t => return Err(r.invalid(format!("position tag {t}"))),
        };
        Ok(Object {
            id,
            label,
            kind,
            color,
            pos,
            chopped: r.bool()?,
            quantity: r.u32()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Menu {
    Closed,
    Inventory,
    Pause,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Avatar {
    pub pos: Pos,
    pub facing: Dir,
    /// -1 looking down, 0 level, +1 looking up.
    pub pitch: i8,
    pub airborne: u8,
    pub held: Option<u16>,
    pub menu: Menu,
    /// Selected hotbar slot, 1..=4.
    pub hotbar: u8,
    pub yaw_acc: i8,
    pub pitch_acc: i8,
    pub prev_keys: KeySet,
    pub start_pos: Pos,
    pub start_facing: Dir,
}

impl Avatar {
    pub fn new(pos: Pos, facing: Dir) -> Self {
        Avatar {
            pos,
            facing,
            pitch: 0,
            airborne: 0,
            held: None,
            menu: Menu::Closed,
            hotbar: 1,
            yaw_acc: 0,
            pitch_acc: 0,
            prev_keys: KeySet::EMPTY,
            start_pos: pos,
            start_facing: facing,
        }
    }

    fn encode(&self, w: &mut Writer) {
        self.pos.encode(w);
        w.u8(self.facing as u8);
        w.i8(self.pitch);
        w.u8(self.airborne);
        match self.held {
            Some(id) => {
                w.u8(1);
                w.u16(id);
            }
            None => w.u8(0),
        }
        w.u8(self.menu as u8);
        w.u8(self.hotbar);
        w.i8(self.yaw_acc);
        w.i8(self.pitch_acc);
        w.u16(self.prev_keys.bits());
        self.start_pos.encode(w);
        w.u8(self.start_facing as u8);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let pos = Pos::decode(r)?;
        let facing = decode_dir(r)?;
        let pitch = r.i8()?;
        let airborne = r.u8()?;
        let held = match r.u8()? {
            0 => None,
            1 => Some(r.u16()?),
            t => return Err(r.invalid(format!("held tag {t}"))),
        };
        let menu = match r.u8()? {
            0 => Menu::Closed,
            1 => Menu::Inventory,
            2 => Menu::Pause,
            m => return Err(r.invalid(format!("menu code {m}"))),
        };
        let hotbar = r.u8()?;
        if !(1..=4).contains(&hotbar) || !(-1..=1).contains(&pitch) {
            return Err(r.invalid("avatar field out of range"));
        }
        Ok(Avatar {
            pos,
            facing,
            pitch,
            airborne,
            held,
            menu,
            hotbar,
            yaw_acc: r.i8()?,
            pitch_acc: r.i8()?,
            prev_keys: KeySet::from_bits(r.u16()?),
            start_pos: Pos::decode(r)?,
            start_facing: decode_dir(r)?,
        })
    }
}

fn decode_dir(r: &mut Reader<'_>) -> Result<Dir, DecodeError> {
    let c = r.u8()?;
    Dir::from_code(c).ok_or_else(|| r.invalid(format!("direction code {c}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verb {
    PickUp,
    Drop,
    Chop,
    Attach,
    Detach,
    Harvest,
    Craft,
    Scan,
    Jump,
    /// An interaction attempt that had no effect on the object.
    Touch,
}

impl Verb {
    const ALL: [Verb; 10] = [
        Verb::PickUp,
        Verb::Drop,
        Verb::Chop,
        Verb::Attach,
        Verb::Detach,
        Verb::Harvest,
        Verb::Craft,
        Verb::Scan,
        Verb::Jump,
        Verb::Touch,
    ];

    /// Whether this verb counts as the agent interacting with `object`.
    pub fn is_contact(self) -> bool {
        !matches!(self, Verb::Jump | Verb::Scan | Verb::Craft)
    }
}

/// One entry of the interaction log used by goal checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub tick: u64,
    pub verb: Verb,
    pub object: Option<u16>,
    /// Second participant, e.g. the block something was attached to.
    pub other: Option<u16>,
}

impl Interaction {
    fn encode(&self, w: &mut Writer) {
        w.u64(self.tick);
        w.u8(self.verb as u8);
        for o in [self.object, self.other] {
            match o {
                Some(id) => {
                    w.u8(1);
                    w.u16(id);
                }
                None => w.u8(0),
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tick = r.u64()?;
        let v = r.u8()?;
        let verb = *Verb::ALL
            .get(usize::from(v))
            .ok_or_else(|| r.invalid(format!("verb code {v}")))?;
        let mut ids = [None, None];
        for slot in &mut ids {
            *slot = match r.u8()? {
                0 => None,
                1 => Some(r.u16()?),
                t => return Err(r.invalid(format!("option tag {t}"))),
            };
        }
        Ok(Interaction {
            tick,
            verb,
            object: ids[0],
            other: ids[1],
        })
    }
}

/// Map, avatar, objects and the interaction log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scene {
    pub width: i16,
    pub height: i16,
    pub tiles: Vec<Tile>,
    pub floor_color: u8,
    pub avatar: Avatar,
    pub objects: Vec<Object>,
    pub log: Vec<Interaction>,
}

/// What the shared control layer did this tick, for the world-specific layer to act on.
#[derive(Debug, Clone, Copy, Default)]
pub struct ControlOutcome {
    pub primary: Option<Pos>,
    pub secondary: Option<Pos>,
    pub primary_clicked: bool,
    pub secondary_clicked: bool,
}

impl Scene {
    pub fn new(width: i16, height: i16, floor_color: u8, avatar: Avatar) -> Self {
        let mut tiles = vec![Tile::Floor; (width * height) as usize];
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x == width - 1 || y == height - 1 {
                    tiles[(y * width + x) as usize] = Tile::Wall;
                }
            }
        }
        Scene {
            width,
            height,
            tiles,
            floor_color,
            avatar,
            objects: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.width && p.y < self.height
    }

    pub fn tile(&self, p: Pos) -> Option<Tile> {
        self.in_bounds(p)
            .then(|| self.tiles[(p.y * self.width + p.x) as usize])
    }

    pub fn set_tile(&mut self, p: Pos, t: Tile) {
        if self.in_bounds(p) {
            let w = self.width;
            self.tiles[(p.y * w + p.x) as usize] = t;
        }
    }

    pub fn object(&self, id: u16) -> Option<&Object> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: u16) -> Option<&mut Object> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    pub fn find_label(&self, label: &str) -> Option<&Object> {
        self.objects.iter().find(|o| o.label == label)
    }

    /// All placed objects at `p`, in id order.
    pub fn objects_at(&self, p: Pos) -> impl Iterator<Item = &Object> {
        self.objects.iter().filter(move |o| o.pos == Some(p))
    }

    pub fn occupied(&self, p: Pos) -> bool {
        self.objects_at(p).next().is_some()
    }

    pub fn walkable(&self, p: Pos) -> bool {
        self.tile(p) == Some(Tile::Floor) && !self.occupied(p) && p != self.avatar.pos
    }

    /// Free floor: walkable and not the avatar's cell.
    pub fn free_floor(&self, p: Pos) -> bool {
        self.walkable(p)
    }

    /// The first interactive cell straight ahead within reach, stopping at walls.
    pub fn target_cell(&self) -> Option<Pos> {
        for d in 1..=REACH {
            let p = self.avatar.pos.offset(self.avatar.facing, d);
            match self.tile(p) {
                None | Some(Tile::Wall) => return None,
                Some(Tile::Board) | Some(Tile::Bench) => return Some(p),
                Some(Tile::Floor) if self.occupied(p) => return Some(p),
                Some(Tile::Floor) => {}
            }
        }
        None
    }

    pub fn in_reach(&self, p: Pos) -> bool {
        let d = self.avatar.pos.manhattan(p);
        d >= 1 && d <= REACH
    }

    pub fn record(&mut self, tick: u64, verb: Verb, object: Option<u16>, other: Option<u16>) {
        self.log.push(Interaction {
            tick,
            verb,
            object,
            other,
        });
    }

    /// Keyboard, mouse, movement and jumping. Returns where clicks landed; the
    /// world-specific layer resolves what they do.
    pub fn apply_controls(
        &mut self,
        action: &ActionEvent,
        tick: u64,
        events: &mut Vec<TextEvent>,
    ) -> ControlOutcome {
        let keys = action.keys;
        let pressed = KeySet::from_bits(keys.bits() & !self.avatar.prev_keys.bits());
        self.avatar.prev_keys = keys;
        self.avatar.airborne = self.avatar.airborne.saturating_sub(1);

        if pressed.contains(Key::Esc) {
            self.avatar.menu = match self.avatar.menu {
                Menu::Pause => {
                    events.push(TextEvent::new(tick, "Menu closed"));
                    Menu::Closed
                }
                _ => {
                    events.push(TextEvent::new(tick, "Menu opened"));
                    Menu::Pause
                }
            };
        } else if pressed.contains(Key::E) {
            match self.avatar.menu {
                Menu::Closed => {
                    self.avatar.menu = Menu::Inventory;
                    events.push(TextEvent::new(tick, "Inventory"));
                }
                Menu::Inventory => {
                    self.avatar.menu = Menu::Closed;
                    events.push(TextEvent::new(tick, "Inventory closed"));
                }
                Menu::Pause => {}
            }
        }
        if self.avatar.menu != Menu::Closed {
            return ControlOutcome::default();
        }

        for (k, slot) in [(Key::Num1, 1), (Key::Num2, 2), (Key::Num3, 3), (Key::Num4, 4)] {
            if keys.contains(k) {
                self.avatar.hotbar = slot;
            }
        }

        self.avatar.yaw_acc = self.avatar.yaw_acc.saturating_add(action.mouse_dx);
        if self.avatar.yaw_acc <= -TURN_THRESHOLD {
            self.avatar.facing = self.avatar.facing.left();
            self.avatar.yaw_acc = 0;
        } else if self.avatar.yaw_acc >= TURN_THRESHOLD {
            self.avatar.facing = self.avatar.facing.right();
            self.avatar.yaw_acc = 0;
        }
        // Mouse up (negative dy) tilts the view up.
        self.avatar.pitch_acc = self.avatar.pitch_acc.saturating_add(action.mouse_dy);
        if self.avatar.pitch_acc <= -TURN_THRESHOLD {
            self.avatar.pitch = (self.avatar.pitch + 1).min(1);
            self.avatar.pitch_acc = 0;
        } else if self.avatar.pitch_acc >= TURN_THRESHOLD {
            self.avatar.pitch = (self.avatar.pitch - 1).max(-1);
            self.avatar.pitch_acc = 0;
        }

        let facing = self.avatar.facing;
        let step_dir = if keys.contains(Key::W) {
            Some(facing)
        } else if keys.contains(Key::S) {
            Some(facing.back())
        } else if keys.contains(Key::A) {
            Some(facing.left())
        } else if keys.contains(Key::D) {
            Some(facing.right())
        } else {
            None
        };
        if let Some(d) = step_dir {
            let next = self.avatar.pos.offset(d, 1);
            if self.walkable(next) {
                self.avatar.pos = next;
            }
        }

        if keys.contains(Key::Space) && self.avatar.airborne == 0 {
            self.avatar.airborne = JUMP_TICKS;
            self.record(tick, Verb::Jump, None, None);
        }

        if keys.contains(Key::Q) {
            if let Some(id) = self.avatar.held {
                let front = self.avatar.pos.offset(facing, 1);
                if self.free_floor(front) {
                    self.avatar.held = None;
                    let name = {
                        let o = self.object_mut(id).expect("held object exists");
                        o.pos = Some(front);
                        o.display_name()
                    };
                    self.record(tick, Verb::Drop, Some(id), None);
                    events.push(TextEvent::new(tick, format!("Dropped {name}")));
                }
            }
        }

        let target = self.target_cell();
        ControlOutcome {
            primary: if action.left_button { target } else { None },
            secondary: if action.right_button { target } else { None },
            primary_clicked: action.left_button,
            secondary_clicked: action.right_button,
        }
    }

    /// Egocentric view: the avatar sits at row 7, column 7, facing up the frame.
    pub fn render_view(&self, glyph_at: impl Fn(Pos) -> Option<Cell>) -> Frame {
        let mut frame = Frame::blank();
        let fwd = self.avatar.facing;
        let right = fwd.right();
        for row in 0..HUD_ROW {
            for col in 0..FRAME_WIDTH {
                let f = AVATAR_ROW as i16 - row as i16;
                let s = col as i16 - AVATAR_COL as i16;
                let p = self.avatar.pos.offset(fwd, f).offset(right, s);
                let cell = if !self.in_bounds(p) {
                    Cell::VOID
                } else if p == self.avatar.pos {
                    let sym = if self.avatar.airborne > 0 {
                        symbol::AVATAR_AIR
                    } else {
                        symbol::AVATAR
                    };
                    Cell::new(sym, color::WHITE)
                } else if let Some(c) = glyph_at(p) {
                    c
                } else {
                    match self.tile(p).expect("in bounds") {
                        Tile::Floor => Cell::new(symbol::FLOOR, self.floor_color),
                        Tile::Wall => Cell::new(symbol::WALL, color::DARK),
                        Tile::Board => Cell::new(symbol::BOARD, color::BROWN),
                        Tile::Bench => Cell::new(symbol::BENCH, color::ORANGE),
                    }
                };
                frame.set(row, col, cell);
            }
        }
        let a = &self.avatar;
        let hud = |col: usize, c: Cell, frame: &mut Frame| frame.set(HUD_ROW, col, c);
        let pitch = match a.pitch {
            1 => symbol::HUD_PITCH_UP,
            -1 => symbol::HUD_PITCH_DOWN,
            _ => symbol::HUD_PITCH_LEVEL,
        };
        hud(0, Cell::new(pitch, color::HUD), &mut frame);
        let air = if a.airborne > 0 {
            symbol::HUD_AIRBORNE
        } else {
            symbol::HUD_GROUNDED
        };
        hud(1, Cell::new(air, color::HUD), &mut frame);
        let held = a
            .held
            .and_then(|id| self.object(id))
            .map(|o| Cell::new(object_symbol(o, 1), o.color))
            .unwrap_or(Cell::new(symbol::HUD_EMPTY_HAND, color::HUD));
        hud(2, held, &mut frame);
        let menu = match a.menu {
            Menu::Closed => symbol::HUD_MENU_CLOSED,
            Menu::Inventory => symbol::HUD_MENU_INVENTORY,
            Menu::Pause => symbol::HUD_MENU_PAUSE,
        };
        hud(3, Cell::new(menu, color::HUD), &mut frame);
        frame
    }

    pub fn encode(&self, w: &mut Writer) {
        w.u16(self.width as u16);
        w.u16(self.height as u16);
        w.bytes(&self.tiles.iter().map(|t| t.code()).collect::<Vec<_>>());
        w.u8(self.floor_color);
        self.avatar.encode(w);
        w.seq(&self.objects, |w, o| o.encode(w));
        w.seq(&self.log, |w, i| i.encode(w));
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let width = r.u16()? as i16;
        let height = r.u16()? as i16;
        if !(1..=64).contains(&width) || !(1..=64).contains(&height) {
            return Err(r.invalid(format!("map size {width}x{height}")));
        }
        let at = r.offset();
        let raw = r.take((width * height) as usize)?;
        let tiles = raw
            .iter()
            .map(|&c| Tile::from_code(c))
            .collect::<Option<Vec<_>>>()
            .ok_or(DecodeError::Invalid {
                offset: at,
                reason: "tile code".into(),
            })?;
        let floor_color = r.u8()?;
        let avatar = Avatar::decode(r)?;
        let objects = r.seq(Object::decode)?;
        let log = r.seq(Interaction::decode)?;
        Ok(Scene {
            width,
            height,
            tiles,
            floor_color,
            avatar,
            objects,
            log,
        })
    }

    /// Shortest-path distances (in moves) from every walkable cell to `goal_cells`.
    pub fn distance_field(&self, goals: &[Pos]) -> Vec<Option<u16>> {
        let n = (self.width * self.height) as usize;
        let mut dist = vec![None; n];
        let mut queue = VecDeque::new();
        for &g in goals {
            if self.in_bounds(g) && (self.walkable(g) || g == self.avatar.pos) {
                let i = (g.y * self.width + g.x) as usize;
                if dist[i].is_none() {
                    dist[i] = Some(0);
                    queue.push_back(g);
                }
            }
        }
        while let Some(p) = queue.pop_front() {
            let d = dist[(p.y * self.width + p.x) as usize].expect("queued cells have a distance");
            for dir in Dir::ALL {
                let q = p.offset(dir, 1);
                if !self.in_bounds(q) || !(self.walkable(q) || q == self.avatar.pos) {
                    continue;
                }
                let i = (q.y * self.width + q.x) as usize;
                if dist[i].is_none() {
                    dist[i] = Some(d + 1);
                    queue.push_back(q);
                }
            }
        }
        dist
    }

    pub fn dist_at(&self, field: &[Option<u16>], p: Pos) -> Option<u16> {
        if !self.in_bounds(p) {
            return None;
        }
        field[(p.y * self.width + p.x) as usize]
    }
}

/// Glyph for an object at stack height `height` (1-based).
pub fn object_symbol(o: &Object, height: usize) -> u8 {
    let base = o.kind.base_symbol();
    if o.kind.is_block() {
        base + (height.clamp(1, 3) - 1) as u8
    } else if o.kind == ObjectKind::Carrot && o.chopped {
        symbol::CHOPPED_CARROT
    } else if o.kind.is_resource() && o.quantity == 0 {
        symbol::DEPLETED
    } else {
        base
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_cycles() {
        for d in Dir::ALL {
            assert_eq!(d.left().right(), d);
            assert_eq!(d.left().left(), d.back());
        }
    }

    #[test]
    fn scene_round_trip() {
        let mut s = Scene::new(6, 5, color::GRAY, Avatar::new(Pos::new(2, 2), Dir::East));
        s.objects.push(Object {
            id: 1,
            label: "red_cube".into(),
            kind: ObjectKind::Cube,
            color: color::RED,
            pos: Some(Pos::new(3, 2)),
            chopped: false,
            quantity: 0,
        });
        s.record(4, Verb::Touch, Some(1), None);
        let mut w = Writer::new();
        s.encode(&mut w);
        let bytes = w.into_bytes();
        let mut r = Reader::new(&bytes);
        assert_eq!(Scene::decode(&mut r).unwrap(), s);
        r.finish().unwrap();
    }

    #[test]
    fn target_stops_at_walls() {
        let s = Scene::new(4, 4, color::GRAY, Avatar::new(Pos::new(1, 1), Dir::North));
        assert_eq!(s.target_cell(), None);
    }
}
