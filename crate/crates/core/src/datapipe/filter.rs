//! Heuristic cleaning of instruction segments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::annotation::MAX_SEGMENT_TICKS;
use crate::netproto::{replay, InstructionSegment, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterRules {
    /// Minimum length of an idle span (no-op actions, frame unchanged) to cut out.
    pub idle_ticks: u64,
    /// Segments with fewer whitespace tokens are dropped.
    pub min_tokens: usize,
    /// Longer segments are truncated to this many ticks.
    pub max_segment_ticks: u64,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            idle_ticks: 30,
            min_tokens: 2,
            max_segment_ticks: MAX_SEGMENT_TICKS,
        }
    }
}

/// Counts per rule.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub segments_in: usize,
    pub segments_out: usize,
    pub idle_spans: usize,
    pub idle_ticks_removed: u64,
    pub split_segments: usize,
    pub short_instruction: usize,
    pub truncated: usize,
    pub truncated_ticks: u64,
    pub rejected: usize,
}

impl FilterReport {
    pub fn absorb(&mut self, other: &FilterReport) {
        self.segments_in += other.segments_in;
        self.segments_out += other.segments_out;
        self.idle_spans += other.idle_spans;
        self.idle_ticks_removed += other.idle_ticks_removed;
        self.split_segments += other.split_segments;
        self.short_instruction += other.short_instruction;
        self.truncated += other.truncated;
        self.truncated_ticks += other.truncated_ticks;
        self.rejected += other.rejected;
    }
}

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("trajectory rejected: {reason}")]
    Rejected { reason: String },
}

/// Maximal idle spans `[a, b)` of at least `min_len` ticks. A tick is idle when its action
/// is a no-op and the frame after it hashes the same as the frame before.
pub fn idle_spans(traj: &Trajectory, min_len: u64) -> Vec<(u64, u64)> {
    let hashes = traj.recorded_hashes();
    let mut spans = Vec::new();
    let mut start = None;
    for (i, a) in traj.actions.iter().enumerate() {
        let idle = a.is_noop() && hashes[i] == hashes[i + 1];
        match (idle, start) {
            (true, None) => start = Some(i as u64),
            (false, Some(s)) => {
                if i as u64 - s >= min_len {
                    spans.push((s, i as u64));
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        let end = traj.actions.len() as u64;
        if end - s >= min_len {
            spans.push((s, end));
        }
    }
    spans
}

/// Applies the rules to `segments` of `traj`. Order: cut idle spans (splitting segments
/// around them), drop short instructions, truncate long segments.
pub fn filter_segments(
    traj: &Trajectory,
    segments: &[InstructionSegment],
    rules: &FilterRules,
) -> Result<(Vec<InstructionSegment>, FilterReport), FilterError> {
    replay(traj).map_err(|e| FilterError::Rejected { reason: e.to_string() })?;
    let len = traj.len() as u64;
    let spans = idle_spans(traj, rules.idle_ticks.max(1));
    let mut report = FilterReport {
        segments_in: segments.len(),
        idle_spans: spans.len(),
        ..FilterReport::default()
    };
    let mut out = Vec::new();
    for seg in segments {
        let (t0, t1) = (seg.t0.min(len), seg.t1.min(len));
        let mut pieces = Vec::new();
        let mut cursor = t0;
        for &(a, b) in &spans {
            if b <= cursor || a >= t1 {
                continue;
            }
            if a > cursor {
                pieces.push((cursor, a));
            }
            report.idle_ticks_removed += b.min(t1) - a.max(cursor);
            cursor = b.min(t1);
        }
        if cursor < t1 {
            pieces.push((cursor, t1));
        }
        if pieces.len() > 1 {
            report.split_segments += 1;
        }
        if seg.text.split_whitespace().count() < rules.min_tokens {
            report.short_instruction += 1;
            continue;
        }
        for (a, mut b) in pieces {
            if b - a > rules.max_segment_ticks {
                report.truncated += 1;
                report.truncated_ticks += b - a - rules.max_segment_ticks;
                b = a + rules.max_segment_ticks;
            }
            out.push(InstructionSegment {
                t0: a,
                t1: b,
                text: seg.text.clone(),
                source: seg.source,
            });
        }
    }
    report.segments_out = out.len();
    Ok((out, report))
}

/// Filters the trajectory's own segments.
pub fn filter(traj: &Trajectory, rules: &FilterRules) -> Result<(Vec<InstructionSegment>, FilterReport), FilterError> {
    filter_segments(traj, &traj.segments, rules)
}
