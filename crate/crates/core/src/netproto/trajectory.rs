//! Recorded sessions: the container file, its sidecar index, and bit-exact replay.
//!
//! File: `MWTR`, u16 version, then records of `u8 kind, u32 len, bytes`:
//! kind 0 header, 1 framed [`Message`] (observations and single-action chunks),
//! 2 instruction segment, 3 footer. The sidecar (`MWTI`) maps ticks to record offsets.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::message::{ActionChunk, Message, Role, SessionConfig};
use crate::codec::{DecodeError, Reader, Writer};
use crate::worldcore::{ActionEvent, Observation, StepError, WorldId, WorldState};

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"MWTR";
pub const INDEX_MAGIC: &[u8; 4] = b"MWTI";
pub const TRAJECTORY_VERSION: u16 = 1;

const REC_HEADER: u8 = 0;
const REC_MESSAGE: u8 = 1;
const REC_SEGMENT: u8 = 2;
const REC_FOOTER: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentSource {
    Live,
    Posthoc,
    Setter,
    Scripted,
}

impl SegmentSource {
    const ALL: [SegmentSource; 4] = [
        SegmentSource::Live,
        SegmentSource::Posthoc,
        SegmentSource::Setter,
        SegmentSource::Scripted,
    ];
}

/// An instruction covering ticks `[t0, t1)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstructionSegment {
    pub t0: u64,
    pub t1: u64,
    pub text: String,
    pub source: SegmentSource,
}

impl InstructionSegment {
    fn encode(&self, w: &mut Writer) {
        w.u64(self.t0);
        w.u64(self.t1);
        w.str(&self.text);
        w.u8(self.source as u8);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let t0 = r.u64()?;
        let t1 = r.u64()?;
        let text = r.string()?;
        let c = r.u8()?;
        let source = *SegmentSource::ALL
            .get(usize::from(c))
            .ok_or_else(|| r.invalid(format!("segment source {c}")))?;
        Ok(InstructionSegment { t0, t1, text, source })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryHeader {
    pub world_id: WorldId,
    pub seed: u64,
    pub task_id: Option<String>,
    pub role: Role,
    pub config: SessionConfig,
    /// Save-state bytes of the state observed at tick 0.
    pub initial_state: Vec<u8>,
}

impl TrajectoryHeader {
    fn encode(&self, w: &mut Writer) {
        w.u8(self.world_id.code());
        w.u64(self.seed);
        w.opt_str(self.task_id.as_deref());
        self.role.encode(w);
        self.config.encode(w);
        w.len_prefixed(&self.initial_state);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let c = r.u8()?;
        let world_id = WorldId::from_code(c).ok_or_else(|| r.invalid(format!("world code {c}")))?;
        Ok(TrajectoryHeader {
            world_id,
            seed: r.u64()?,
            task_id: r.opt_string()?,
            role: Role::decode(r)?,
            config: SessionConfig::decode(r)?,
            initial_state: r.len_prefixed()?.to_vec(),
        })
    }
}

/// Observations and actions at ticks `0..T`; `final_hash` is the frame hash at tick `T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub observations: Vec<Observation>,
    pub actions: Vec<ActionEvent>,
    pub segments: Vec<InstructionSegment>,
    pub final_hash: u64,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed trajectory: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("initial state does not decode: {0}")]
    BadState(DecodeError),
    #[error("replay diverged at tick {tick}: expected hash {expected:#018x}, got {actual:#018x}")]
    Divergence { tick: u64, expected: u64, actual: u64 },
    #[error("step failed at tick {tick}: {source}")]
    Step { tick: u64, source: StepError },
    #[error("stream lengths differ: {observations} observations, {actions} actions")]
    Shape { observations: usize, actions: usize },
}

impl Trajectory {
    pub fn new(header: TrajectoryHeader, initial: Observation) -> Trajectory {
        let final_hash = initial.frame.hash();
        Trajectory {
            header,
            observations: vec![initial],
            actions: Vec::new(),
            segments: Vec::new(),
            final_hash,
        }
    }

    /// Ticks elapsed.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Records `action` and the observation it produced.
    pub fn push(&mut self, action: ActionEvent, next: Observation) {
        self.actions.push(action);
        self.final_hash = next.frame.hash();
        self.observations.push(next);
    }

    /// Drops the trailing observation so the streams have equal length.
    pub fn seal(&mut self) {
        if self.observations.len() > self.actions.len() {
            let last = self.observations.pop().expect("non-empty");
            self.final_hash = last.frame.hash();
        }
    }

    /// Frame hashes of observations `0..T` followed by the final one.
    pub fn recorded_hashes(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.observations.iter().map(|o| o.frame.hash()).collect();
        v.push(self.final_hash);
        v
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let bad = |m: String| Err(TrajectoryError::Malformed(m));
        if self.observations.len() != self.actions.len() {
            return bad(format!(
                "{} observations vs {} actions",
                self.observations.len(),
                self.actions.len()
            ));
        }
        for (i, (o, a)) in self.observations.iter().zip(&self.actions).enumerate() {
            if o.tick != i as u64 || a.tick != i as u64 {
                return bad(format!("stream out of order at index {i}"));
            }
        }
        for s in &self.segments {
            if s.t0 >= s.t1 {
                return bad(format!("empty segment [{}, {})", s.t0, s.t1));
            }
        }
        for src in SegmentSource::ALL {
            let mut spans: Vec<_> = self.segments.iter().filter(|s| s.source == src).collect();
            spans.sort_by_key(|s| s.t0);
            if spans.windows(2).any(|w| w[0].t1 > w[1].t0) {
                return bad(format!("overlapping {src:?} segments"));
            }
        }
        Ok(())
    }

    /// Serializes the container. Returns the bytes and the sidecar index.
    pub fn to_bytes(&self) -> (Vec<u8>, Vec<u8>) {
        let mut w = TrajectoryWriter::new(Vec::new(), &self.header).expect("in-memory write");
        for (o, a) in self.observations.iter().zip(&self.actions) {
            w.observation(o).expect("in-memory write");
            w.action(a).expect("in-memory write");
        }
        for s in &self.segments {
            w.segment(s).expect("in-memory write");
        }
        w.finish(self.final_hash).expect("in-memory write")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Trajectory, TrajectoryError> {
        let mut r = Reader::new(bytes);
        r.magic(TRAJECTORY_MAGIC)?;
        r.version(TRAJECTORY_VERSION)?;
        let mut header = None;
        let mut observations = Vec::new();
        let mut actions = Vec::new();
        let mut segments = Vec::new();
        let mut final_hash = None;
        while r.remaining() > 0 {
            let kind = r.u8()?;
            let base = r.offset() + 4;
            let body = r.len_prefixed()?;
            let mut br = Reader::with_base(body, base);
            match kind {
                REC_HEADER => header = Some(TrajectoryHeader::decode(&mut br)?),
                REC_MESSAGE => match Message::decode(body).map_err(|e| shift(e, base))? {
                    Message::Observation(o) => observations.push(o),
                    Message::Action(c) => actions.extend(c.events),
                    other => {
                        return Err(TrajectoryError::Malformed(format!(
                            "unexpected {} record",
                            other.name()
                        )))
                    }
                },
                REC_SEGMENT => segments.push(InstructionSegment::decode(&mut br)?),
                REC_FOOTER => {
                    final_hash = Some(br.u64()?);
                }
                k => return Err(br.invalid(format!("record kind {k}")).into()),
            }
            if kind != REC_MESSAGE {
                br.finish()?;
            }
        }
        let header = header.ok_or_else(|| TrajectoryError::Malformed("missing header".into()))?;
        let final_hash = final_hash.ok_or_else(|| TrajectoryError::Malformed("missing footer".into()))?;
        let t = Trajectory {
            header,
            observations,
            actions,
            segments,
            final_hash,
        };
        t.validate()?;
        Ok(t)
    }

    /// Writes `path` and its sidecar index.
    pub fn save(&self, path: &Path) -> Result<(), TrajectoryError> {
        let (bytes, index) = self.to_bytes();
        std::fs::write(path, bytes)?;
        std::fs::write(index_path(path), index)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Trajectory, TrajectoryError> {
        Trajectory::from_bytes(&std::fs::read(path)?)
    }
}

fn shift(e: DecodeError, base: usize) -> DecodeError {
    match e {
        DecodeError::Truncated { offset, needed } => DecodeError::Truncated {
            offset: offset + base,
            needed,
        },
        DecodeError::BadMagic {
            offset,
            expected,
            found,
        } => DecodeError::BadMagic {
            offset: offset + base,
            expected,
            found,
        },
        DecodeError::BadVersion {
            offset,
            found,
            supported,
        } => DecodeError::BadVersion {
            offset: offset + base,
            found,
            supported,
        },
        DecodeError::Invalid { offset, reason } => DecodeError::Invalid {
            offset: offset + base,
            reason,
        },
        DecodeError::Trailing { offset, trailing } => DecodeError::Trailing {
            offset: offset + base,
            trailing,
        },
    }
}

pub fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

/// Append-only writer; the recorder of a live session.
pub struct TrajectoryWriter<W: Write> {
    out: W,
    written: u64,
    index: Vec<(u64, u64)>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut out: W, header: &TrajectoryHeader) -> std::io::Result<Self> {
        let mut w = Writer::new();
        w.bytes(TRAJECTORY_MAGIC);
        w.u16(TRAJECTORY_VERSION);
        let prefix = w.into_bytes();
        out.write_all(&prefix)?;
        let mut tw = TrajectoryWriter {
            out,
            written: prefix.len() as u64,
            index: Vec::new(),
        };
        let mut h = Writer::new();
        header.encode(&mut h);
        tw.record(REC_HEADER, &h.into_bytes())?;
        Ok(tw)
    }

    fn record(&mut self, kind: u8, body: &[u8]) -> std::io::Result<()> {
        let mut w = Writer::new();
        w.u8(kind);
        w.len_prefixed(body);
        let bytes = w.into_bytes();
        self.out.write_all(&bytes)?;
        self.written += bytes.len() as u64;
        Ok(())
    }

    pub fn observation(&mut self, o: &Observation) -> std::io::Result<()> {
        self.index.push((o.tick, self.written));
        self.record(REC_MESSAGE, &Message::Observation(o.clone()).encode())
    }

    pub fn action(&mut self, a: &ActionEvent) -> std::io::Result<()> {
        let chunk = ActionChunk {
            computed_at_tick: a.tick,
            events: vec![*a],
        };
        self.record(REC_MESSAGE, &Message::Action(chunk).encode())
    }

    pub fn segment(&mut self, s: &InstructionSegment) -> std::io::Result<()> {
        let mut w = Writer::new();
        s.encode(&mut w);
        self.record(REC_SEGMENT, &w.into_bytes())
    }

    /// Writes the footer and returns the output plus the encoded sidecar index.
    pub fn finish(mut self, final_hash: u64) -> std::io::Result<(W, Vec<u8>)> {
        let mut w = Writer::new();
        w.u64(final_hash);
        self.record(REC_FOOTER, &w.into_bytes())?;
        self.out.flush()?;
        Ok((self.out, encode_index(&self.index)))
    }
}

fn encode_index(entries: &[(u64, u64)]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(INDEX_MAGIC);
    w.u16(TRAJECTORY_VERSION);
    w.seq(entries, |w, &(t, o)| {
        w.u64(t);
        w.u64(o);
    });
    w.into_bytes()
}

/// `(tick, byte offset)` of each observation record.
pub fn decode_index(bytes: &[u8]) -> Result<Vec<(u64, u64)>, DecodeError> {
    let mut r = Reader::new(bytes);
    r.magic(INDEX_MAGIC)?;
    r.version(TRAJECTORY_VERSION)?;
    let v = r.seq(|r| Ok((r.u64()?, r.u64()?)))?;
    r.finish()?;
    Ok(v)
}

/// Re-executes the recorded actions from the header's save state. Returns the frame hash
/// produced by each action; errors at the first tick whose hash differs from the recording.
pub fn replay(traj: &Trajectory) -> Result<Vec<u64>, ReplayError> {
    if traj.observations.len() != traj.actions.len() {
        return Err(ReplayError::Shape {
            observations: traj.observations.len(),
            actions: traj.actions.len(),
        });
    }
    if traj.actions.is_empty() {
        return Ok(Vec::new());
    }
    let mut state = WorldState::load(&traj.header.initial_state).map_err(ReplayError::BadState)?;
    let recorded = traj.recorded_hashes();
    let h0 = state.frame_hash();
    if h0 != recorded[0] {
        return Err(ReplayError::Divergence {
            tick: state.tick,
            expected: recorded[0],
            actual: h0,
        });
    }
    let mut out = Vec::with_capacity(traj.actions.len());
    for (i, a) in traj.actions.iter().enumerate() {
        let obs = state.advance(a).map_err(|source| ReplayError::Step { tick: a.tick, source })?;
        let h = obs.frame.hash();
        if h != recorded[i + 1] {
            return Err(ReplayError::Divergence {
                tick: obs.tick,
                expected: recorded[i + 1],
                actual: h,
            });
        }
        out.push(h);
    }
    Ok(out)
}
