//! Environment contract: tick-based deterministic worlds, the shared
//! keyboard-and-mouse action space, symbolic frames and save states.

mod action;
mod frame;
mod state;
mod task;

pub use action::{ActionError, ActionEvent, Key, KeySet, KEY_COUNT, MOUSE_BUCKETS, MOUSE_BUCKET_MAX};
pub use frame::{
    color, symbol, Cell, Frame, FrameError, COLOR_COUNT, FRAME_CELLS, FRAME_HEIGHT, FRAME_WIDTH,
    OVERLAY_MAX_CHARS, SYMBOL_COUNT,
};
pub use state::{
    load, save, step, Observation, StepError, TextEvent, WorldId, WorldRng, WorldState,
    SAVE_MAGIC, SAVE_VERSION, TICK_HZ,
};
pub use task::{
    instantiate_task, EpisodeOutcome, EpisodeStatus, SkillCategory, TaskError, TaskSpec,
    DEFAULT_BUDGET_TICKS,
};
