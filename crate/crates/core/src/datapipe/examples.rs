//! Fixed-length action chunks cut from instruction segments.

use crate::evalharness::EpisodeEvaluator;
use crate::netproto::{InstructionSegment, Trajectory};
use crate::worldcore::{ActionEvent, TaskSpec, WorldState};
use crate::worlds::GoalStatus;

pub const CHUNK_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExampleOptions {
    pub chunk_len: usize,
    /// Ticks between consecutive chunk starts; `chunk_len` tiles without overlap.
    pub stride: usize,
    /// The chunk starting at tick `s` is predicted from the observation at `s - offset_k`.
    pub offset_k: u64,
}

impl Default for ExampleOptions {
    fn default() -> Self {
        ExampleOptions {
            chunk_len: CHUNK_LEN,
            stride: CHUNK_LEN,
            offset_k: 0,
        }
    }
}

/// One supervised target. The observation window is the episode's frame at `obs_tick`
/// plus the frames before it (the memory context), looked up through `episode`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub episode: usize,
    pub obs_tick: u64,
    pub start_tick: u64,
    pub instruction: String,
    pub actions: Vec<ActionEvent>,
    /// False on padding steps.
    pub mask: Vec<bool>,
    pub goal_labels: Vec<bool>,
}

impl TrainingExample {
    pub fn valid_steps(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Tick (state index) at which the task's goal first holds when evaluated from the
/// segment's first tick, or `None`.
pub fn success_tick(traj: &Trajectory, segment: &InstructionSegment, task: &TaskSpec) -> Option<u64> {
    let mut state = WorldState::load(&traj.header.initial_state).ok()?;
    let t1 = segment.t1.min(traj.len() as u64);
    for a in &traj.actions[..segment.t0 as usize] {
        state.advance(a).ok()?;
    }
    let mut ev = EpisodeEvaluator::new(task, &state).ok()?;
    for a in &traj.actions[segment.t0 as usize..t1 as usize] {
        let obs = state.advance(a).ok()?;
        match ev.update(&state, a, &obs) {
            GoalStatus::Success => return ev.decided_at(),
            GoalStatus::Ongoing => {}
            _ => return None,
        }
    }
    None
}

/// Chunks over `[t0, t1)` of `segment`. Goal labels are computed with `task` when the
/// segment's instruction is that task's; otherwise they are all false.
pub fn make_examples(
    episode: usize,
    traj: &Trajectory,
    segment: &InstructionSegment,
    task: Option<&TaskSpec>,
    opts: &ExampleOptions,
) -> Vec<TrainingExample> {
    let t1 = segment.t1.min(traj.len() as u64);
    if segment.t0 >= t1 || opts.chunk_len == 0 {
        return Vec::new();
    }
    let done_at = task
        .filter(|t| t.instruction == segment.text)
        .and_then(|t| success_tick(traj, segment, t));
    let stride = opts.stride.max(1) as u64;
    let mut out = Vec::new();
    let mut s = segment.t0;
    while s < t1 {
        let mut actions = Vec::with_capacity(opts.chunk_len);
        let mut mask = Vec::with_capacity(opts.chunk_len);
        let mut goal_labels = Vec::with_capacity(opts.chunk_len);
        for i in 0..opts.chunk_len as u64 {
            let t = s + i;
            if t < t1 {
                actions.push(traj.actions[t as usize]);
                mask.push(true);
            } else {
                actions.push(ActionEvent::noop(t));
                mask.push(false);
            }
            goal_labels.push(done_at.is_some_and(|d| t >= d));
        }
        out.push(TrainingExample {
            episode,
            obs_tick: s.saturating_sub(opts.offset_k),
            start_tick: s,
            instruction: segment.text.clone(),
            actions,
            mask,
            goal_labels,
        });
        s += stride;
    }
    out
}
