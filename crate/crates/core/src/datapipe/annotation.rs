//! Instruction segments supplied after the fact: post-hoc annotation uploads and
//! setter instructions merged into a solver's trajectory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netproto::{InstructionSegment, SegmentSource, Trajectory};

/// Longest annotated span: ten seconds at the fixed tick rate.
pub const MAX_SEGMENT_TICKS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSegment {
    pub trajectory_id: String,
    pub t0: u64,
    pub t1: u64,
    pub instruction: String,
    pub source: SegmentSource,
    pub annotator_id: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("empty span [{t0}, {t1})")]
    EmptySpan { t0: u64, t1: u64 },
    #[error("span [{t0}, {t1}) is {len} ticks; at most {MAX_SEGMENT_TICKS} allowed")]
    TooLong { t0: u64, t1: u64, len: u64 },
    #[error("source {0:?} is not an annotation source")]
    BadSource(SegmentSource),
    #[error("span [{t0}, {t1}) exceeds trajectory length {len}")]
    OutOfRange { t0: u64, t1: u64, len: u64 },
    #[error("annotation for {found:?} applied to trajectory {expected:?}")]
    WrongTrajectory { expected: String, found: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl AnnotationSegment {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        let (t0, t1) = (self.t0, self.t1);
        if t0 >= t1 {
            return Err(AnnotationError::EmptySpan { t0, t1 });
        }
        if t1 - t0 > MAX_SEGMENT_TICKS {
            return Err(AnnotationError::TooLong { t0, t1, len: t1 - t0 });
        }
        if self.source == SegmentSource::Live {
            return Err(AnnotationError::BadSource(self.source));
        }
        Ok(())
    }

    pub fn to_segment(&self) -> InstructionSegment {
        InstructionSegment {
            t0: self.t0,
            t1: self.t1,
            text: self.instruction.clone(),
            source: self.source,
        }
    }
}

/// Parses an upload body: either a JSON array of segments or one JSON object per line.
/// Every record is validated.
pub fn parse_annotations(body: &str) -> Result<Vec<AnnotationSegment>, AnnotationError> {
    let trimmed = body.trim_start();
    let records: Vec<AnnotationSegment> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| AnnotationError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?
    } else {
        let mut out = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(line).map_err(|e| AnnotationError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        out
    };
    for (i, a) in records.iter().enumerate() {
        a.validate().map_err(|e| AnnotationError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
    }
    Ok(records)
}

/// Adds annotation segments to a trajectory. Annotations from the same source must not
/// overlap each other or existing segments of that source.
pub fn merge_annotations(
    traj: &mut Trajectory,
    trajectory_id: &str,
    annotations: &[AnnotationSegment],
) -> Result<usize, AnnotationError> {
    let len = traj.len() as u64;
    for a in annotations {
        a.validate()?;
        if a.trajectory_id != trajectory_id {
            return Err(AnnotationError::WrongTrajectory {
                expected: trajectory_id.to_string(),
                found: a.trajectory_id.clone(),
            });
        }
        if a.t1 > len {
            return Err(AnnotationError::OutOfRange { t0: a.t0, t1: a.t1, len });
        }
    }
    let before = traj.segments.clone();
    traj.segments.extend(annotations.iter().map(AnnotationSegment::to_segment));
    traj.segments.sort_by_key(|s| (s.t0, s.t1, s.source));
    if let Err(e) = traj.validate() {
        traj.segments = before;
        return Err(AnnotationError::Parse {
            line: 0,
            message: e.to_string(),
        });
    }
    Ok(annotations.len())
}

/// Turns a setter's live instructions into setter segments on the solver's trajectory:
/// each instruction covers the ticks until the next one (or the end), capped at the
/// annotation horizon.
pub fn merge_setter_instructions(traj: &mut Trajectory, instructions: &[(u64, String)]) -> usize {
    let len = traj.len() as u64;
    let mut sorted: Vec<&(u64, String)> = instructions.iter().filter(|(t, _)| *t < len).collect();
    sorted.sort_by_key(|(t, _)| *t);
    let mut added = 0;
    for (i, (t0, text)) in sorted.iter().enumerate() {
        let next = sorted.get(i + 1).map_or(len, |(t, _)| *t);
        let t1 = next.min(t0 + MAX_SEGMENT_TICKS);
        if t1 > *t0 {
            traj.segments.push(InstructionSegment {
                t0: *t0,
                t1,
                text: text.clone(),
                source: SegmentSource::Setter,
            });
            added += 1;
        }
    }
    traj.segments.sort_by_key(|s| (s.t0, s.t1, s.source));
    added
}
