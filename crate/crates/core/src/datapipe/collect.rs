//! Scripted collection: expert episodes → filtered shards + manifest + filter report.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::expert::{solve, ExpertError};
use super::filter::{filter, FilterError, FilterReport, FilterRules};
use super::manifest::{DatasetManifest, ManifestEntry, ManifestError, PREPROCESSING_VERSION};
use super::shard::{load_collection, Shard, ShardError, SHARD_EXTENSION};
use crate::worldcore::{TaskSpec, WorldId};

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("no tasks selected")]
    NoTasks,
    #[error("no seeds selected")]
    NoSeeds,
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Shard(#[from] ShardError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("collect io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize)]
pub struct CollectSummary {
    pub shards: usize,
    pub seeds: Vec<u64>,
    pub tasks: usize,
    pub report: FilterReport,
    pub manifest: PathBuf,
}

pub fn collection_name(world: WorldId) -> String {
    format!("{}-scripted", world.as_str())
}

fn shard_name(task_id: &str, seed: u64) -> String {
    format!("{}__s{seed}.{SHARD_EXTENSION}", task_id.replace('/', "__"))
}

/// Runs the expert on every task × seed, filters, and writes one shard per episode next to
/// `manifest_path` (in a subdirectory per world). Every world with tasks gets weight 1.
pub fn collect(
    tasks: &[TaskSpec],
    seeds: &[u64],
    rules: &FilterRules,
    manifest_path: &Path,
) -> Result<CollectSummary, CollectError> {
    if tasks.is_empty() {
        return Err(CollectError::NoTasks);
    }
    if seeds.is_empty() {
        return Err(CollectError::NoSeeds);
    }
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let config = serde_json::json!({ "rules": rules, "seeds": seeds }).to_string();
    let mut total = FilterReport::default();
    let mut shards = 0;
    let mut entries = Vec::new();
    for world in WorldId::ALL {
        let world_tasks: Vec<&TaskSpec> = tasks.iter().filter(|t| t.world_id == world).collect();
        if world_tasks.is_empty() {
            continue;
        }
        let dir = root.join(world.as_str());
        std::fs::create_dir_all(&dir)?;
        for entry in std::fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.extension().is_some_and(|x| x == SHARD_EXTENSION) {
                std::fs::remove_file(p)?;
            }
        }
        for task in world_tasks {
            for &seed in seeds {
                let run = solve(task, seed)?;
                let (segments, report) = filter(&run.trajectory, rules)?;
                total.absorb(&report);
                let shard = Shard {
                    trajectory_id: format!("{}#{seed}", task.task_id),
                    collection: collection_name(world),
                    seed,
                    preprocessing_version: PREPROCESSING_VERSION,
                    config: config.clone(),
                    trajectory: run.trajectory,
                    segments,
                    report,
                };
                shard.save(&dir.join(shard_name(&task.task_id, seed)))?;
                shards += 1;
            }
        }
        entries.push(ManifestEntry {
            world,
            collection: collection_name(world),
            path: PathBuf::from(world.as_str()),
            weight: 1.0,
        });
    }
    let manifest = DatasetManifest::new(entries);
    manifest.save(manifest_path)?;
    std::fs::write(
        root.join("filter_report.json"),
        serde_json::to_string_pretty(&total).expect("report serializes"),
    )?;
    Ok(CollectSummary {
        shards,
        seeds: seeds.to_vec(),
        tasks: tasks.len(),
        report: total,
        manifest: manifest_path.to_path_buf(),
    })
}

/// Loads a manifest and the shards of each entry, in manifest order.
pub fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<Vec<Shard>>), CollectError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut collections = Vec::new();
    for e in &manifest.entries {
        collections.push(load_collection(&root.join(&e.path))?);
    }
    Ok((manifest, collections))
}
