//! Dataset manifests and the weighted mixture sampler.

use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::worldcore::WorldId;

pub const PREPROCESSING_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub world: WorldId,
    pub collection: String,
    /// Shard file, relative to the manifest's directory.
    pub path: PathBuf,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub preprocessing_version: u32,
    #[serde(rename = "entry", default)]
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest has no entries")]
    Empty,
    #[error("entry {collection:?}: weight {weight} must be positive and finite")]
    BadWeight { collection: String, weight: f64 },
    #[error("duplicate collection {0:?}")]
    Duplicate(String),
    #[error("collection {0:?} has positive weight but no segments")]
    EmptyCollection(String),
    #[error("expected {expected} collections, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("unsupported preprocessing version {0}")]
    Version(u32),
    #[error("manifest io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest syntax: {0}")]
    Syntax(String),
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            preprocessing_version: PREPROCESSING_VERSION,
            entries,
        }
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.preprocessing_version != PREPROCESSING_VERSION {
            return Err(ManifestError::Version(self.preprocessing_version));
        }
        if self.entries.is_empty() {
            return Err(ManifestError::Empty);
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(ManifestError::BadWeight {
                    collection: e.collection.clone(),
                    weight: e.weight,
                });
            }
            if !seen.insert(e.collection.as_str()) {
                return Err(ManifestError::Duplicate(e.collection.clone()));
            }
        }
        Ok(())
    }

    /// Normalized mixture weights.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.entries.iter().map(|e| e.weight).sum();
        self.entries.iter().map(|e| e.weight / total).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ManifestError> {
        let m: DatasetManifest = toml::from_str(text).map_err(|e| ManifestError::Syntax(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}

/// Draws `(collection, item)` pairs: collections in proportion to their weights, items
/// uniformly within a collection.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    sizes: Vec<usize>,
    probabilities: Vec<f64>,
    index: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl MixtureSampler {
    pub fn new(manifest: &DatasetManifest, sizes: &[usize], seed: u64) -> Result<Self, ManifestError> {
        manifest.validate()?;
        if sizes.len() != manifest.entries.len() {
            return Err(ManifestError::Shape {
                expected: manifest.entries.len(),
                found: sizes.len(),
            });
        }
        if let Some((e, _)) = manifest.entries.iter().zip(sizes).find(|(_, &n)| n == 0) {
            return Err(ManifestError::EmptyCollection(e.collection.clone()));
        }
        let weights: Vec<f64> = manifest.entries.iter().map(|e| e.weight).collect();
        let index = WeightedIndex::new(&weights).map_err(|e| ManifestError::Syntax(e.to_string()))?;
        Ok(MixtureSampler {
            sizes: sizes.to_vec(),
            probabilities: manifest.probabilities(),
            index,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn sample(&mut self) -> (usize, usize) {
        let c = self.index.sample(&mut self.rng);
        let i = self.rng.gen_range(0..self.sizes[c]);
        (c, i)
    }
}

/// A sampler bound to the items it draws from.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub collections: Vec<Vec<T>>,
    sampler: MixtureSampler,
}

impl<T> Dataset<T> {
    pub fn sample(&mut self) -> &T {
        let (c, i) = self.sampler.sample();
        &self.collections[c][i]
    }

    pub fn sample_index(&mut self) -> (usize, usize) {
        self.sampler.sample()
    }

    pub fn probabilities(&self) -> &[f64] {
        self.sampler.probabilities()
    }

    pub fn len(&self) -> usize {
        self.collections.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `collections[i]` holds the items of `manifest.entries[i]`.
pub fn build_dataset<T>(manifest: &DatasetManifest, collections: Vec<Vec<T>>, seed: u64) -> Result<Dataset<T>, ManifestError> {
    let sizes: Vec<usize> = collections.iter().map(Vec::len).collect();
    let sampler = MixtureSampler::new(manifest, &sizes, seed)?;
    Ok(Dataset { collections, sampler })
}
