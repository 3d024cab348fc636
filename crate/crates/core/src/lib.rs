//! Instructable agents in small deterministic worlds: environments, streaming protocol,
//! data pipeline, behavioral-cloning policy and evaluation.

pub mod agent;
pub mod codec;
pub mod datapipe;
pub mod evalharness;
pub mod netproto;
pub mod worldcore;
pub mod worlds;
