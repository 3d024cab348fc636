//! Asynchronous session layer: wire messages, offset scheduling, clock drivers,
//! trajectory recording and replay, and the network server.

mod client;
mod message;
mod schedule;
mod server;
mod session;
mod trajectory;

pub use client::{RemoteEpisode, RemoteSession};
pub use message::{
    read_message, write_message, ActionChunk, EndReason, LatencyModel, Message, Role,
    SessionConfig, HEADER_LEN, MAX_PAYLOAD, MESSAGE_MAGIC, PROTOCOL_VERSION,
};
pub use schedule::{offset_chunk, schedule_offset_action, ActionBuffer, Executed, ScheduleStats};
pub use server::{Server, ServerConfig, ShutdownHandle, SERVER_NAME};
pub use session::{
    run_realtime, run_simulated, SessionClient, SessionCore, SessionOutcome, SilentClient,
    SimOptions,
};
pub use trajectory::{
    decode_index, index_path, replay, InstructionSegment, ReplayError, SegmentSource, Trajectory,
    TrajectoryError, TrajectoryHeader, TrajectoryWriter, INDEX_MAGIC, TRAJECTORY_MAGIC,
    TRAJECTORY_VERSION,
};
