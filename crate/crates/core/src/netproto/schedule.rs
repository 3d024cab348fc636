//! Offset scheduling of action chunks and the per-tick action buffer.

use std::collections::BTreeMap;

use super::message::ActionChunk;
use crate::worldcore::ActionEvent;

/// Stamps chunk entry `i` for tick `computed_at_tick + offset_k + i`.
pub fn schedule_offset_action(
    chunk: &[ActionEvent],
    computed_at_tick: u64,
    offset_k: u32,
) -> Vec<(u64, ActionEvent)> {
    chunk
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let t = computed_at_tick + u64::from(offset_k) + i as u64;
            (t, ActionEvent { tick: t, ..*a })
        })
        .collect()
}

/// Builds the wire chunk for `schedule_offset_action`.
pub fn offset_chunk(chunk: &[ActionEvent], computed_at_tick: u64, offset_k: u32) -> ActionChunk {
    ActionChunk {
        computed_at_tick,
        events: schedule_offset_action(chunk, computed_at_tick, offset_k)
            .into_iter()
            .map(|(_, a)| a)
            .collect(),
    }
}

/// What happened to the action executed at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Executed {
    /// An action stamped for this tick, from a chunk computed at `computed_at`.
    Scheduled { computed_at: u64 },
    /// Nothing was pending: previous keys held, mouse still.
    Fallback,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScheduleStats {
    /// Ticks executed with a stamped action.
    pub scheduled: u64,
    /// Ticks executed with the key-hold fallback.
    pub fallback: u64,
    /// Actions that arrived after their tick had run.
    pub late: u64,
    /// Pending actions replaced by a newer chunk.
    pub preempted: u64,
    /// Chunks ignored because a newer one had already arrived.
    pub stale_chunks: u64,
    /// Sum of `tick - computed_at` over scheduled executions.
    pub lag_sum: u64,
}

impl ScheduleStats {
    /// Fraction of received actions that executed at their stamped tick.
    pub fn on_time_fraction(&self) -> f64 {
        let total = self.scheduled + self.late;
        if total == 0 {
            1.0
        } else {
            self.scheduled as f64 / total as f64
        }
    }

    pub fn mean_lag(&self) -> f64 {
        if self.scheduled == 0 {
            0.0
        } else {
            self.lag_sum as f64 / self.scheduled as f64
        }
    }
}

/// Pending actions by tick. A newer chunk replaces everything pending from its first tick on.
#[derive(Debug, Clone, Default)]
pub struct ActionBuffer {
    pending: BTreeMap<u64, (ActionEvent, u64)>,
    newest: Option<u64>,
    last: ActionEvent,
    pub stats: ScheduleStats,
}

impl ActionBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts a chunk that arrived before tick `next_tick` executes.
    pub fn insert(&mut self, chunk: &ActionChunk, next_tick: u64) {
        if self.newest.is_some_and(|n| chunk.computed_at_tick < n) {
            self.stats.stale_chunks += 1;
            return;
        }
        self.newest = Some(chunk.computed_at_tick);
        let Some(first) = chunk.events.iter().map(|e| e.tick).min() else {
            return;
        };
        let dropped = self.pending.split_off(&first);
        self.stats.preempted += dropped.len() as u64;
        for e in &chunk.events {
            if e.tick < next_tick {
                self.stats.late += 1;
            } else {
                self.pending.insert(e.tick, (*e, chunk.computed_at_tick));
            }
        }
    }

    /// The action to execute at `tick`, with the key-hold fallback when nothing is pending.
    pub fn take(&mut self, tick: u64) -> (ActionEvent, Executed) {
        // Anything older than `tick` can no longer run.
        let keep = self.pending.split_off(&tick);
        self.pending = keep;
        let (action, how) = match self.pending.remove(&tick) {
            Some((a, computed_at)) => {
                self.stats.scheduled += 1;
                self.stats.lag_sum += tick.saturating_sub(computed_at);
                (a, Executed::Scheduled { computed_at })
            }
            None => {
                self.stats.fallback += 1;
                let held = ActionEvent {
                    tick,
                    mouse_dx: 0,
                    mouse_dy: 0,
                    ..self.last
                };
                (held, Executed::Fallback)
            }
        };
        self.last = action;
        (action, how)
    }

    pub fn pending_ticks(&self) -> Vec<u64> {
        self.pending.keys().copied().collect()
    }
}
