//! The keyboard-and-mouse action contract shared by every world.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Reader, Writer};

/// Largest magnitude of a bucketed relative mouse motion.
pub const MOUSE_BUCKET_MAX: i8 = 3;
/// Number of mouse buckets per axis (`-3..=3`).
pub const MOUSE_BUCKETS: usize = 7;
pub const KEY_COUNT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Key {
    W,
    A,
    S,
    D,
    Space,
    E,
    Q,
    R,
    F,
    C,
    Num1,
    Num2,
    Num3,
    Num4,
    Shift,
    Esc,
}

impl Key {
    pub const ALL: [Key; KEY_COUNT] = [
        Key::W,
        Key::A,
        Key::S,
        Key::D,
        Key::Space,
        Key::E,
        Key::Q,
        Key::R,
        Key::F,
        Key::C,
        Key::Num1,
        Key::Num2,
        Key::Num3,
        Key::Num4,
        Key::Shift,
        Key::Esc,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Key> {
        Key::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Key::W => "W",
            Key::A => "A",
            Key::S => "S",
            Key::D => "D",
            Key::Space => "SPACE",
            Key::E => "E",
            Key::Q => "Q",
            Key::R => "R",
            Key::F => "F",
            Key::C => "C",
            Key::Num1 => "1",
            Key::Num2 => "2",
            Key::Num3 => "3",
            Key::Num4 => "4",
            Key::Shift => "SHIFT",
            Key::Esc => "ESC",
        }
    }

    pub fn from_name(name: &str) -> Option<Key> {
        Key::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A set of held keys, one bit per [`Key`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct KeySet(u16);

impl KeySet {
    pub const EMPTY: KeySet = KeySet(0);

    pub fn from_bits(bits: u16) -> Self {
        KeySet(bits)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn contains(self, key: Key) -> bool {
        self.0 & (1 << key.index()) != 0
    }

    pub fn insert(&mut self, key: Key) {
        self.0 |= 1 << key.index();
    }

    pub fn remove(&mut self, key: Key) {
        self.0 &= !(1 << key.index());
    }

    pub fn with(mut self, key: Key) -> Self {
        self.insert(key);
        self
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Key> {
        Key::ALL.into_iter().filter(move |k| self.contains(*k))
    }
}

impl FromIterator<Key> for KeySet {
    fn from_iter<I: IntoIterator<Item = Key>>(iter: I) -> Self {
        let mut set = KeySet::EMPTY;
        for k in iter {
            set.insert(k);
        }
        set
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionError {
    #[error("mouse bucket {0} outside -3..=3")]
    MouseOutOfRange(i8),
}

/// One tick of human-compatible control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ActionEvent {
    pub tick: u64,
    pub keys: KeySet,
    pub mouse_dx: i8,
    pub mouse_dy: i8,
    pub left_button: bool,
    pub right_button: bool,
}

impl ActionEvent {
    pub fn noop(tick: u64) -> Self {
        ActionEvent {
            tick,
            ..Default::default()
        }
    }

    pub fn key(tick: u64, key: Key) -> Self {
        ActionEvent {
            tick,
            keys: KeySet::EMPTY.with(key),
            ..Default::default()
        }
    }

    pub fn is_noop(&self) -> bool {
        self.keys.is_empty()
            && self.mouse_dx == 0
            && self.mouse_dy == 0
            && !self.left_button
            && !self.right_button
    }

    /// The same control content stamped with a different tick.
    pub fn at(self, tick: u64) -> Self {
        ActionEvent { tick, ..self }
    }

    pub fn validate(&self) -> Result<(), ActionError> {
        for v in [self.mouse_dx, self.mouse_dy] {
            if !(-MOUSE_BUCKET_MAX..=MOUSE_BUCKET_MAX).contains(&v) {
                return Err(ActionError::MouseOutOfRange(v));
            }
        }
        Ok(())
    }

    pub fn encode(&self, w: &mut Writer) {
        w.u64(self.tick);
        w.u16(self.keys.bits());
        w.i8(self.mouse_dx);
        w.i8(self.mouse_dy);
        w.u8(u8::from(self.left_button) | (u8::from(self.right_button) << 1));
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tick = r.u64()?;
        let keys = KeySet::from_bits(r.u16()?);
        let at = r.offset();
        let mouse_dx = r.i8()?;
        let mouse_dy = r.i8()?;
        let buttons = r.u8()?;
        if buttons & !0b11 != 0 {
            return Err(r.invalid(format!("button byte {buttons:#04x}")));
        }
        let ev = ActionEvent {
            tick,
            keys,
            mouse_dx,
            mouse_dy,
            left_button: buttons & 1 != 0,
            right_button: buttons & 2 != 0,
        };
        ev.validate().map_err(|e| DecodeError::Invalid {
            offset: at,
            reason: e.to_string(),
        })?;
        Ok(ev)
    }
}

impl fmt::Display for ActionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} keys=[", self.tick)?;
        for (i, k) in self.keys.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}")?;
        }
        write!(
            f,
            "] dx={} dy={} lmb={} rmb={}",
            self.mouse_dx, self.mouse_dy, self.left_button, self.right_button
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_indices_are_dense() {
        for (i, k) in Key::ALL.iter().enumerate() {
            assert_eq!(k.index(), i);
            assert_eq!(Key::from_name(k.name()), Some(*k));
        }
    }

    #[test]
    fn keyset_ops() {
        let s: KeySet = [Key::W, Key::Esc].into_iter().collect();
        assert!(s.contains(Key::W) && s.contains(Key::Esc) && !s.contains(Key::A));
        assert_eq!(s.len(), 2);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![Key::W, Key::Esc]);
    }

    #[test]
    fn out_of_range_mouse_rejected_on_decode() {
        let mut ev = ActionEvent::noop(3);
        ev.mouse_dx = 4;
        let mut w = Writer::new();
        ev.encode(&mut w);
        let bytes = w.into_bytes();
        assert!(ActionEvent::decode(&mut Reader::new(&bytes)).is_err());
    }
}
