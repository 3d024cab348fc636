use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::action::ActionEvent;
use super::frame::Frame;
use crate::codec::{DecodeError, Reader, Writer};
use crate::worlds::WorldContent;

pub const TICK_HZ: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorldId {
    PlayRoom,
    BuildLab,
    Harvest,
}

impl WorldId {
    pub const ALL: [WorldId; 3] = [WorldId::PlayRoom, WorldId::BuildLab, WorldId::Harvest];

    pub fn as_str(self) -> &'static str {
        match self {
            WorldId::PlayRoom => "playroom",
            WorldId::BuildLab => "buildlab",
            WorldId::Harvest => "harvest",
        }
    }

    pub fn parse(s: &str) -> Option<WorldId> {
        WorldId::ALL
            .into_iter()
            .find(|w| w.as_str().eq_ignore_ascii_case(s.trim()))
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<WorldId> {
        WorldId::ALL.get(usize::from(code)).copied()
    }

    /// Research-style worlds expose ground-truth state; the harvest world is
    /// evaluated through its on-screen text like a commercial game would be.
    pub fn is_research(self) -> bool {
        !matches!(self, WorldId::Harvest)
    }
}

impl fmt::Display for WorldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Seeded generator state carried inside a world. Serializes as seed, stream and word position.
#[derive(Clone, Debug)]
pub struct WorldRng(ChaCha8Rng);

impl WorldRng {
    pub fn from_seed_u64(seed: u64) -> Self {
        WorldRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn below(&mut self, n: u32) -> u32 {
        debug_assert!(n > 0);
        // Modulo bias is irrelevant at these ranges and keeps the draw count fixed.
        self.0.next_u32() % n
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }

    pub fn encode(&self, w: &mut Writer) {
        w.bytes(&self.0.get_seed());
        w.u64(self.0.get_stream());
        w.u128(self.0.get_word_pos());
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.take(32)?);
        let stream = r.u64()?;
        let word_pos = r.u128()?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(WorldRng(rng))
    }
}

impl PartialEq for WorldRng {
    fn eq(&self, other: &Self) -> bool {
        self.0.get_seed() == other.0.get_seed()
            && self.0.get_stream() == other.0.get_stream()
            && self.0.get_word_pos() == other.0.get_word_pos()
    }
}

impl Eq for WorldRng {}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TextEvent {
    pub tick: u64,
    pub text: String,
}

impl TextEvent {
    pub fn new(tick: u64, text: impl Into<String>) -> Self {
        TextEvent {
            tick,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub tick: u64,
    pub frame: Frame,
    /// Text emitted since the previous observation; every tick is in `(previous, tick]`.
    pub text_events: Vec<TextEvent>,
}

impl Observation {
    pub fn frame_hash(&self) -> u64 {
        self.frame.hash()
    }

    pub fn encode(&self, w: &mut Writer) {
        w.u64(self.tick);
        self.frame.encode(w);
        w.seq(&self.text_events, |w, e| {
            w.u64(e.tick);
            w.str(&e.text);
        });
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tick = r.u64()?;
        let frame = Frame::decode(r)?;
        let at = r.offset();
        let text_events = r.seq(|r| {
            Ok(TextEvent {
                tick: r.u64()?,
                text: r.string()?,
            })
        })?;
        if text_events.iter().any(|e| e.tick > tick) {
            return Err(DecodeError::Invalid {
                offset: at,
                reason: "text event stamped after its observation".into(),
            });
        }
        Ok(Observation {
            tick,
            frame,
            text_events,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StepError {
    #[error("protocol error: action stamped for tick {action_tick} but world is at tick {world_tick}")]
    TickMismatch { world_tick: u64, action_tick: u64 },
    #[error("invalid action: {0}")]
    Action(#[from] super::action::ActionError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    pub world_id: WorldId,
    pub tick: u64,
    pub rng: WorldRng,
    pub content: WorldContent,
}

pub const SAVE_MAGIC: &[u8; 4] = b"MWSV";
pub const SAVE_VERSION: u16 = 1;

impl WorldState {
    /// Advances one tick in place and returns the resulting observation.
    pub fn advance(&mut self, action: &ActionEvent) -> Result<Observation, StepError> {
        if action.tick != self.tick {
            return Err(StepError::TickMismatch {
                world_tick: self.tick,
                action_tick: action.tick,
            });
        }
        action.validate()?;
        let next_tick = self.tick + 1;
        let mut events = Vec::new();
        self.content
            .apply(action, next_tick, &mut self.rng, &mut events);
        self.tick = next_tick;
        let frame = self.content.render(&events);
        Ok(Observation {
            tick: self.tick,
            frame,
            text_events: events,
        })
    }

    /// The observation of the current state with no pending text.
    pub fn observe(&self) -> Observation {
        Observation {
            tick: self.tick,
            frame: self.content.render(&[]),
            text_events: Vec::new(),
        }
    }

    pub fn frame_hash(&self) -> u64 {
        self.content.render(&[]).hash()
    }

    /// Canonical save bytes: magic, version, then one length-prefixed body.
    pub fn save(&self) -> Vec<u8> {
        let mut body = Writer::new();
        body.u8(self.world_id.code());
        body.u64(self.tick);
        self.rng.encode(&mut body);
        self.content.encode(&mut body);
        let mut w = Writer::new();
        w.bytes(SAVE_MAGIC);
        w.u16(SAVE_VERSION);
        w.len_prefixed(&body.into_bytes());
        w.into_bytes()
    }

    pub fn load(bytes: &[u8]) -> Result<WorldState, DecodeError> {
        let mut r = Reader::new(bytes);
        r.magic(SAVE_MAGIC)?;
        r.version(SAVE_VERSION)?;
        let base = r.offset() + 4;
        let body = r.len_prefixed()?;
        r.finish()?;
        let mut r = Reader::with_base(body, base);
        let code = r.u8()?;
        let world_id = WorldId::from_code(code)
            .ok_or_else(|| DecodeError::Invalid {
                offset: base,
                reason: format!("unknown world code {code}"),
            })?;
        let tick = r.u64()?;
        let rng = WorldRng::decode(&mut r)?;
        let content = WorldContent::decode(world_id, &mut r)?;
        r.finish()?;
        Ok(WorldState {
            world_id,
            tick,
            rng,
            content,
        })
    }
}

/// Pure form of [`WorldState::advance`].
pub fn step(
    state: &WorldState,
    action: &ActionEvent,
) -> Result<(WorldState, Observation), StepError> {
    let mut next = state.clone();
    let obs = next.advance(action)?;
    Ok((next, obs))
}

pub fn save(state: &WorldState) -> Vec<u8> {
    state.save()
}

pub fn load(bytes: &[u8]) -> Result<WorldState, DecodeError> {
    WorldState::load(bytes)
}
