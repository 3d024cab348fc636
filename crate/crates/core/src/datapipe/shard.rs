//! Shard files: one filtered episode per file, with provenance.

use std::path::Path;

use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::netproto::{InstructionSegment, Trajectory, TrajectoryError};

use super::filter::FilterReport;

pub const SHARD_MAGIC: &[u8; 4] = b"MWSH";
pub const SHARD_VERSION: u16 = 1;
pub const SHARD_EXTENSION: &str = "mwsh";

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub trajectory_id: String,
    pub collection: String,
    pub seed: u64,
    pub preprocessing_version: u32,
    /// Configuration the shard was produced under, as JSON.
    pub config: String,
    pub trajectory: Trajectory,
    /// Segments that survived filtering.
    pub segments: Vec<InstructionSegment>,
    pub report: FilterReport,
}

#[derive(Debug, Error)]
pub enum ShardError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("shard io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad filter report: {0}")]
    Report(String),
}

impl Shard {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(SHARD_MAGIC);
        w.u16(SHARD_VERSION);
        let mut meta = Writer::new();
        meta.str(&self.trajectory_id);
        meta.str(&self.collection);
        meta.u64(self.seed);
        meta.u32(self.preprocessing_version);
        meta.str(&self.config);
        meta.str(&serde_json::to_string(&self.report).expect("report serializes"));
        w.len_prefixed(&meta.into_bytes());
        w.len_prefixed(&self.trajectory.to_bytes().0);
        let mut segs = Writer::new();
        segs.str(&serde_json::to_string(&self.segments).expect("segments serialize"));
        w.len_prefixed(&segs.into_bytes());
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Shard, ShardError> {
        let mut r = Reader::new(bytes);
        r.magic(SHARD_MAGIC)?;
        r.version(SHARD_VERSION)?;
        let base = r.offset() + 4;
        let mut meta = Reader::with_base(r.len_prefixed()?, base);
        let trajectory_id = meta.string()?;
        let collection = meta.string()?;
        let seed = meta.u64()?;
        let preprocessing_version = meta.u32()?;
        let config = meta.string()?;
        let report = serde_json::from_str(&meta.string()?).map_err(|e| ShardError::Report(e.to_string()))?;
        meta.finish()?;
        let trajectory = Trajectory::from_bytes(r.len_prefixed()?)?;
        let base = r.offset() + 4;
        let mut segs = Reader::with_base(r.len_prefixed()?, base);
        let text = segs.string()?;
        let segments = serde_json::from_str(&text).map_err(|e| segs.invalid(e.to_string()))?;
        segs.finish()?;
        r.finish()?;
        Ok(Shard {
            trajectory_id,
            collection,
            seed,
            preprocessing_version,
            config,
            trajectory,
            segments,
            report,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ShardError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Shard, ShardError> {
        Shard::from_bytes(&std::fs::read(path)?)
    }
}

/// Shards in a collection directory, sorted by file name.
pub fn load_collection(dir: &Path) -> Result<Vec<Shard>, ShardError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == SHARD_EXTENSION))
        .collect();
    paths.sort();
    paths.iter().map(|p| Shard::load(p)).collect()
}
