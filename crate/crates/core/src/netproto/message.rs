//! Wire messages. Frame layout: magic `MWMS`, u16 version, u8 variant tag,
//! u32 payload length, payload. All integers little-endian.

use crate::codec::{DecodeError, Reader, Writer};
use crate::worldcore::{ActionEvent, Observation, TextEvent};

pub const MESSAGE_MAGIC: &[u8; 4] = b"MWMS";
pub const PROTOCOL_VERSION: u16 = 1;
/// Header bytes before the payload.
pub const HEADER_LEN: usize = 11;
/// Upper bound accepted for one payload.
pub const MAX_PAYLOAD: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Player,
    Setter,
    Solver,
    Instructor,
    Annotator,
    Judge,
    Agent,
}

impl Role {
    const ALL: [Role; 7] = [
        Role::Player,
        Role::Setter,
        Role::Solver,
        Role::Instructor,
        Role::Annotator,
        Role::Judge,
        Role::Agent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Player => "player",
            Role::Setter => "setter",
            Role::Solver => "solver",
            Role::Instructor => "instructor",
            Role::Annotator => "annotator",
            Role::Judge => "judge",
            Role::Agent => "agent",
        }
    }

    pub(crate) fn encode(self, w: &mut Writer) {
        w.u8(self as u8);
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Role, DecodeError> {
        let c = r.u8()?;
        Role::ALL
            .get(usize::from(c))
            .copied()
            .ok_or_else(|| r.invalid(format!("role code {c}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LatencyModel {
    pub obs_delay_ms: u32,
    pub action_delay_ms: u32,
    pub jitter_ms: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SessionConfig {
    pub tick_hz: u32,
    pub latency: LatencyModel,
    pub offset_k: u32,
    pub record: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            tick_hz: crate::worldcore::TICK_HZ,
            latency: LatencyModel::default(),
            offset_k: 2,
            record: true,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.tick_hz == 0 {
            return Err("tick_hz must be positive".into());
        }
        Ok(())
    }

    pub fn tick_ms(&self) -> f64 {
        1000.0 / f64::from(self.tick_hz)
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u32(self.tick_hz);
        w.u32(self.latency.obs_delay_ms);
        w.u32(self.latency.action_delay_ms);
        w.u32(self.latency.jitter_ms);
        w.u32(self.offset_k);
        w.bool(self.record);
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let at = r.offset();
        let cfg = SessionConfig {
            tick_hz: r.u32()?,
            latency: LatencyModel {
                obs_delay_ms: r.u32()?,
                action_delay_ms: r.u32()?,
                jitter_ms: r.u32()?,
            },
            offset_k: r.u32()?,
            record: r.bool()?,
        };
        cfg.validate().map_err(|reason| DecodeError::Invalid { offset: at, reason })?;
        Ok(cfg)
    }
}

/// Actions computed from the observation at `computed_at_tick`, each stamped with the
/// absolute tick it should execute at.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionChunk {
    pub computed_at_tick: u64,
    pub events: Vec<ActionEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EndReason {
    Success,
    Failure,
    Timeout,
    DistractorFailure,
    Disconnect,
    Shutdown,
    Requested,
}

impl EndReason {
    const ALL: [EndReason; 7] = [
        EndReason::Success,
        EndReason::Failure,
        EndReason::Timeout,
        EndReason::DistractorFailure,
        EndReason::Disconnect,
        EndReason::Shutdown,
        EndReason::Requested,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EndReason::Success => "success",
            EndReason::Failure => "failure",
            EndReason::Timeout => "timeout",
            EndReason::DistractorFailure => "distractor_failure",
            EndReason::Disconnect => "disconnect",
            EndReason::Shutdown => "shutdown",
            EndReason::Requested => "requested",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello {
        protocol: u16,
        role: Role,
        name: String,
    },
    SessionConfig(SessionConfig),
    Observation(Observation),
    Action(ActionChunk),
    Instruction {
        tick: u64,
        text: String,
    },
    /// Start a new episode: either a registry task or a bare world.
    Reset {
        seed: u64,
        task_id: Option<String>,
        world: Option<String>,
    },
    LoadState {
        bytes: Vec<u8>,
    },
    TextEvent(TextEvent),
    Interrupt {
        tick: u64,
        text: String,
    },
    EndEpisode {
        tick: u64,
        reason: EndReason,
    },
    JudgeRequest {
        episode_id: String,
        trajectory_ref: String,
        rubric: String,
    },
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Hello { .. } => 0,
            Message::SessionConfig(_) => 1,
            Message::Observation(_) => 2,
            Message::Action(_) => 3,
            Message::Instruction { .. } => 4,
            Message::Reset { .. } => 5,
            Message::LoadState { .. } => 6,
            Message::TextEvent(_) => 7,
            Message::Interrupt { .. } => 8,
            Message::EndEpisode { .. } => 9,
            Message::JudgeRequest { .. } => 10,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "Hello",
            Message::SessionConfig(_) => "SessionConfig",
            Message::Observation(_) => "Observation",
            Message::Action(_) => "Action",
            Message::Instruction { .. } => "Instruction",
            Message::Reset { .. } => "Reset",
            Message::LoadState { .. } => "LoadState",
            Message::TextEvent(_) => "TextEvent",
            Message::Interrupt { .. } => "Interrupt",
            Message::EndEpisode { .. } => "EndEpisode",
            Message::JudgeRequest { .. } => "JudgeRequest",
        }
    }

    fn encode_payload(&self, w: &mut Writer) {
        match self {
            Message::Hello {
                protocol,
                role,
                name,
            } => {
                w.u16(*protocol);
                role.encode(w);
                w.str(name);
            }
            Message::SessionConfig(c) => c.encode(w),
            Message::Observation(o) => o.encode(w),
            Message::Action(c) => {
                w.u64(c.computed_at_tick);
                w.seq(&c.events, |w, e| e.encode(w));
            }
            Message::Instruction { tick, text } | Message::Interrupt { tick, text } => {
                w.u64(*tick);
                w.str(text);
            }
            Message::Reset {
                seed,
                task_id,
                world,
            } => {
                w.u64(*seed);
                w.opt_str(task_id.as_deref());
                w.opt_str(world.as_deref());
            }
            Message::LoadState { bytes } => w.len_prefixed(bytes),
            Message::TextEvent(e) => {
                w.u64(e.tick);
                w.str(&e.text);
            }
            Message::EndEpisode { tick, reason } => {
                w.u64(*tick);
                w.u8(*reason as u8);
            }
            Message::JudgeRequest {
                episode_id,
                trajectory_ref,
                rubric,
            } => {
                w.str(episode_id);
                w.str(trajectory_ref);
                w.str(rubric);
            }
        }
    }

    fn decode_payload(tag: u8, r: &mut Reader<'_>) -> Result<Message, DecodeError> {
        Ok(match tag {
            0 => Message::Hello {
                protocol: r.u16()?,
                role: Role::decode(r)?,
                name: r.string()?,
            },
            1 => Message::SessionConfig(SessionConfig::decode(r)?),
            2 => Message::Observation(Observation::decode(r)?),
            3 => Message::Action(ActionChunk {
                computed_at_tick: r.u64()?,
                events: r.seq(ActionEvent::decode)?,
            }),
            4 => Message::Instruction {
                tick: r.u64()?,
                text: r.string()?,
            },
            5 => Message::Reset {
                seed: r.u64()?,
                task_id: r.opt_string()?,
                world: r.opt_string()?,
            },
            6 => Message::LoadState {
                bytes: r.len_prefixed()?.to_vec(),
            },
            7 => Message::TextEvent(TextEvent {
                tick: r.u64()?,
                text: r.string()?,
            }),
            8 => Message::Interrupt {
                tick: r.u64()?,
                text: r.string()?,
            },
            9 => Message::EndEpisode {
                tick: r.u64()?,
                reason: {
                    let c = r.u8()?;
                    *EndReason::ALL
                        .get(usize::from(c))
                        .ok_or_else(|| r.invalid(format!("end reason {c}")))?
                },
            },
            10 => Message::JudgeRequest {
                episode_id: r.string()?,
                trajectory_ref: r.string()?,
                rubric: r.string()?,
            },
            t => unreachable!("tag {t} checked by caller"),
        })
    }

    /// Canonical bytes of one framed message.
    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Writer::new();
        self.encode_payload(&mut payload);
        let payload = payload.into_bytes();
        let mut w = Writer::new();
        w.bytes(MESSAGE_MAGIC);
        w.u16(PROTOCOL_VERSION);
        w.u8(self.tag());
        w.len_prefixed(&payload);
        w.into_bytes()
    }

    /// Decodes exactly one framed message occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
        let (msg, used) = Message::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(DecodeError::Trailing {
                offset: used,
                trailing: bytes.len() - used,
            });
        }
        Ok(msg)
    }

    /// Decodes one message from the front of `bytes`, returning it and its length.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Message, usize), DecodeError> {
        let mut r = Reader::new(bytes);
        r.magic(MESSAGE_MAGIC)?;
        r.version(PROTOCOL_VERSION)?;
        let tag_at = r.offset();
        let tag = r.u8()?;
        if tag > 10 {
            return Err(DecodeError::Invalid {
                offset: tag_at,
                reason: format!("unknown message variant {tag} (protocol version {PROTOCOL_VERSION})"),
            });
        }
        let len_at = r.offset();
        let len = r.u32()? as usize;
        if len > MAX_PAYLOAD {
            return Err(DecodeError::Invalid {
                offset: len_at,
                reason: format!("payload length {len} exceeds limit"),
            });
        }
        let body = r.take(len)?;
        let mut pr = Reader::with_base(body, HEADER_LEN);
        let msg = Message::decode_payload(tag, &mut pr)?;
        pr.finish()?;
        Ok((msg, HEADER_LEN + len))
    }
}

/// Reads one framed message from a blocking stream. `Ok(None)` on clean EOF before a header.
pub fn read_message(stream: &mut impl std::io::Read) -> std::io::Result<Option<Message>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        let n = stream.read(&mut header[got..])?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        got += n;
    }
    let len = u32::from_le_bytes(header[7..11].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "payload too large"));
    }
    let mut buf = header.to_vec();
    buf.resize(HEADER_LEN + len, 0);
    stream.read_exact(&mut buf[HEADER_LEN..])?;
    Message::decode(&buf)
        .map(Some)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub fn write_message(stream: &mut impl std::io::Write, msg: &Message) -> std::io::Result<()> {
    stream.write_all(&msg.encode())?;
    stream.flush()
}
