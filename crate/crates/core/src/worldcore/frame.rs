//! Symbolic egocentric frames: the stand-in for rendered pixels.

use crate::codec::{fnv1a64, DecodeError, Reader, Writer};

pub const FRAME_WIDTH: usize = 16;
pub const FRAME_HEIGHT: usize = 16;
pub const FRAME_CELLS: usize = FRAME_WIDTH * FRAME_HEIGHT;
pub const SYMBOL_COUNT: u8 = 64;
pub const COLOR_COUNT: u8 = 16;
pub const OVERLAY_MAX_CHARS: usize = 80;

/// Glyph ids. Anything not listed here is unused.
pub mod symbol {
    pub const VOID: u8 = 0;
    pub const FLOOR: u8 = 1;
    pub const WALL: u8 = 2;
    pub const AVATAR: u8 = 3;
    pub const AVATAR_AIR: u8 = 4;
    pub const BOARD: u8 = 5;
    pub const BENCH: u8 = 6;

    pub const CUBE: u8 = 10;
    pub const BALL: u8 = 11;
    pub const KNIFE: u8 = 12;
    pub const CARROT: u8 = 13;
    pub const CHOPPED_CARROT: u8 = 14;

    /// Block glyphs come in runs of three: stack height 1, 2, 3+.
    pub const SMALL_BLOCK: u8 = 20;
    pub const LARGE_BLOCK: u8 = 24;
    pub const CONNECTOR: u8 = 28;

    pub const TREE: u8 = 32;
    pub const ROCK: u8 = 33;
    pub const BERRY_BUSH: u8 = 34;
    pub const CARBON: u8 = 35;
    pub const DEPLETED: u8 = 36;
    pub const CRITTER: u8 = 37;

    pub const HUD_PITCH_DOWN: u8 = 40;
    pub const HUD_PITCH_LEVEL: u8 = 41;
    pub const HUD_PITCH_UP: u8 = 42;
    pub const HUD_AIRBORNE: u8 = 43;
    pub const HUD_GROUNDED: u8 = 44;
    pub const HUD_EMPTY_HAND: u8 = 45;
    pub const HUD_MENU_CLOSED: u8 = 46;
    pub const HUD_MENU_INVENTORY: u8 = 47;
    pub const HUD_MENU_PAUSE: u8 = 48;
    pub const TOOL_HAND: u8 = 49;
    pub const TOOL_AXE: u8 = 50;
    pub const TOOL_PICK: u8 = 51;
    pub const TOOL_VISOR: u8 = 52;
    pub const DIGIT_0: u8 = 54;
}

/// Palette ids.
pub mod color {
    pub const BLACK: u8 = 0;
    pub const GRAY: u8 = 1;
    pub const DARK: u8 = 2;
    pub const RED: u8 = 3;
    pub const GREEN: u8 = 4;
    pub const BLUE: u8 = 5;
    pub const YELLOW: u8 = 6;
    pub const WHITE: u8 = 7;
    pub const ORANGE: u8 = 8;
    pub const PURPLE: u8 = 9;
    pub const BROWN: u8 = 10;
    pub const CYAN: u8 = 11;
    pub const PINK: u8 = 12;
    pub const OLIVE: u8 = 13;
    pub const SAND: u8 = 14;
    pub const HUD: u8 = 15;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Cell {
    pub symbol: u8,
    pub color: u8,
}

impl Cell {
    pub const VOID: Cell = Cell {
        symbol: symbol::VOID,
        color: color::BLACK,
    };

    pub const fn new(symbol: u8, color: u8) -> Self {
        Cell { symbol, color }
    }

    /// Joint `(symbol, color)` index in `0..1024`.
    pub fn joint_id(self) -> usize {
        usize::from(self.symbol) * usize::from(COLOR_COUNT) + usize::from(self.color)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("cell ({row},{col}) has symbol {symbol} >= 64")]
    Symbol { row: usize, col: usize, symbol: u8 },
    #[error("cell ({row},{col}) has color {color} >= 16")]
    Color { row: usize, col: usize, color: u8 },
    #[error("overlay line {index} is {len} chars (max 80)")]
    Overlay { index: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    cells: Vec<Cell>,
    pub overlay_text: Vec<String>,
}

impl Default for Frame {
    fn default() -> Self {
        Frame {
            cells: vec![Cell::VOID; FRAME_CELLS],
            overlay_text: Vec::new(),
        }
    }
}

impl Frame {
    pub fn blank() -> Self {
        Self::default()
    }

    pub fn width(&self) -> usize {
        FRAME_WIDTH
    }

    pub fn height(&self) -> usize {
        FRAME_HEIGHT
    }

    pub fn get(&self, row: usize, col: usize) -> Cell {
        self.cells[row * FRAME_WIDTH + col]
    }

    pub fn set(&mut self, row: usize, col: usize, cell: Cell) {
        self.cells[row * FRAME_WIDTH + col] = cell;
    }

    /// Row-major cells.
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Adds an overlay line, clipped to 80 characters.
    pub fn push_overlay(&mut self, text: &str) {
        self.overlay_text
            .push(text.chars().take(OVERLAY_MAX_CHARS).collect());
    }

    /// Row-major `(symbol, color)` byte pairs.
    pub fn cell_bytes(&self) -> Vec<u8> {
        self.cells.iter().flat_map(|c| [c.symbol, c.color]).collect()
    }

    /// 64-bit FNV-1a over the row-major cell bytes. Overlay text is not hashed.
    pub fn hash(&self) -> u64 {
        fnv1a64(&self.cell_bytes())
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        for (i, c) in self.cells.iter().enumerate() {
            let (row, col) = (i / FRAME_WIDTH, i % FRAME_WIDTH);
            if c.symbol >= SYMBOL_COUNT {
                return Err(FrameError::Symbol {
                    row,
                    col,
                    symbol: c.symbol,
                });
            }
            if c.color >= COLOR_COUNT {
                return Err(FrameError::Color {
                    row,
                    col,
                    color: c.color,
                });
            }
        }
        for (index, line) in self.overlay_text.iter().enumerate() {
            let len = line.chars().count();
            if len > OVERLAY_MAX_CHARS {
                return Err(FrameError::Overlay { index, len });
            }
        }
        Ok(())
    }

    pub fn encode(&self, w: &mut Writer) {
        w.bytes(&self.cell_bytes());
        w.seq(&self.overlay_text, |w, s| w.str(s));
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let at = r.offset();
        let raw = r.take(FRAME_CELLS * 2)?;
        let cells = raw
            .chunks_exact(2)
            .map(|p| Cell::new(p[0], p[1]))
            .collect();
        let overlay_text = r.seq(|r| r.string())?;
        let frame = Frame {
            cells,
            overlay_text,
        };
        frame.validate().map_err(|e| DecodeError::Invalid {
            offset: at,
            reason: e.to_string(),
        })?;
        Ok(frame)
    }

    /// A compact text rendering, one character per cell. Used by logs and the CLI.
    pub fn ascii(&self) -> String {
        let mut out = String::with_capacity(FRAME_CELLS + FRAME_HEIGHT);
        for row in 0..FRAME_HEIGHT {
            for col in 0..FRAME_WIDTH {
                out.push(glyph(self.get(row, col).symbol));
            }
            out.push('\n');
        }
        out
    }
}

fn glyph(sym: u8) -> char {
    use symbol::*;
    match sym {
        VOID => ' ',
        FLOOR => '.',
        WALL => '#',
        AVATAR => '@',
        AVATAR_AIR => '^',
        BOARD => '=',
        BENCH => 'B',
        CUBE => 'c',
        BALL => 'o',
        KNIFE => 'k',
        CARROT => 'v',
        CHOPPED_CARROT => 'x',
        20..=22 => 's',
        24..=26 => 'L',
        28..=30 => '+',
        TREE => 'T',
        ROCK => 'R',
        BERRY_BUSH => '*',
        CARBON => 'C',
        DEPLETED => '_',
        CRITTER => 'm',
        54..=63 => char::from(b'0' + (sym - DIGIT_0)),
        _ => '?',
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_covers_cells_only() {
        let mut a = Frame::blank();
        let b = Frame::blank();
        a.push_overlay("hello");
        assert_eq!(a.hash(), b.hash());
        a.set(3, 4, Cell::new(symbol::CUBE, color::RED));
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn overlay_is_clipped() {
        let mut f = Frame::blank();
        f.push_overlay(&"x".repeat(200));
        assert_eq!(f.overlay_text[0].len(), OVERLAY_MAX_CHARS);
        assert!(f.validate().is_ok());
    }

    #[test]
    fn invalid_symbol_detected() {
        let mut f = Frame::blank();
        f.set(0, 0, Cell::new(64, 0));
        assert!(matches!(f.validate(), Err(FrameError::Symbol { .. })));
    }
}
