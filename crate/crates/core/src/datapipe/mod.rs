//! Demonstrations to training data: scripted experts, annotation merging, filtering,
//! mixtures, training examples, shards and instruction clustering.

mod annotation;
mod cluster;
mod collect;
mod examples;
mod expert;
mod filter;
mod manifest;
mod shard;

pub use annotation::{
    merge_annotations, merge_setter_instructions, parse_annotations, AnnotationError, AnnotationSegment,
    MAX_SEGMENT_TICKS,
};
pub use cluster::{cluster_instructions, cosine_distance, embed_instruction, ClusterTree, Merge, EMBED_DIM};
pub use collect::{collect, collection_name, load_dataset, CollectError, CollectSummary};
pub use examples::{make_examples, success_tick, ExampleOptions, TrainingExample, CHUNK_LEN};
pub use expert::{expert_plan, expert_step, scripted_expert, solve, ExpertError, ExpertRun, EXPERT_LEAD_IN, EXPERT_TAIL};
pub use filter::{filter, filter_segments, idle_spans, FilterError, FilterReport, FilterRules};
pub use manifest::{
    build_dataset, Dataset, DatasetManifest, ManifestEntry, ManifestError, MixtureSampler, PREPROCESSING_VERSION,
};
pub use shard::{load_collection, Shard, ShardError, SHARD_EXTENSION, SHARD_MAGIC, SHARD_VERSION};

pub(crate) use cluster::xml_escape;
