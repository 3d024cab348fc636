//! Flat parameter vector with a named layout, and checkpoint files.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::config::{AgentConfig, ConfigError};
use crate::codec::{fnv1a64, DecodeError, Reader, Writer};
use crate::worldcore::{FRAME_CELLS, Cell};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MWCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Joint (symbol, color) ids.
pub const JOINT_IDS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of every tensor in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub cell_embed: usize,
    pub enc_w1: usize,
    pub enc_b1: usize,
    pub enc_w2: usize,
    pub enc_b2: usize,
    pub word_embed: usize,
    pub null_instr: usize,
    pub attn_q: usize,
    pub attn_bq: usize,
    pub attn_k: usize,
    pub attn_v: usize,
    pub trunk_w: usize,
    pub trunk_b: usize,
    pub gate_w: usize,
    pub gate_b: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub goal_w: usize,
    pub goal_b: usize,
    pub total: usize,
}

fn tensor_shapes(c: &AgentConfig) -> Vec<(&'static str, Vec<usize>)> {
    let d = c.embed_dim;
    vec![
        ("cell_embed", vec![JOINT_IDS, c.cell_dim]),
        ("enc_w1", vec![c.encoder_hidden, FRAME_CELLS * c.cell_dim]),
        ("enc_b1", vec![c.encoder_hidden]),
        ("enc_w2", vec![d, c.encoder_hidden]),
        ("enc_b2", vec![d]),
        ("word_embed", vec![c.vocab_size, d]),
        ("null_instr", vec![d]),
        ("attn_q", vec![d, 2 * d]),
        ("attn_bq", vec![d]),
        ("attn_k", vec![d, d]),
        ("attn_v", vec![d, d]),
        ("trunk_w", vec![c.trunk_hidden, 3 * d]),
        ("trunk_b", vec![c.trunk_hidden]),
        ("gate_w", vec![c.trunk_hidden, d]),
        ("gate_b", vec![c.trunk_hidden]),
        ("out_w", vec![c.logit_count(), c.trunk_hidden]),
        ("out_b", vec![c.logit_count()]),
        ("goal_w", vec![c.trunk_hidden]),
        ("goal_b", vec![1]),
    ]
}

fn build_layout(c: &AgentConfig) -> (Vec<Tensor>, Layout) {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, shape) in tensor_shapes(c) {
        let t = Tensor {
            name: name.to_string(),
            offset,
            shape,
        };
        offset += t.len();
        tensors.push(t);
    }
    let o = |i: usize| tensors[i].offset;
    let layout = Layout {
        cell_embed: o(0),
        enc_w1: o(1),
        enc_b1: o(2),
        enc_w2: o(3),
        enc_b2: o(4),
        word_embed: o(5),
        null_instr: o(6),
        attn_q: o(7),
        attn_bq: o(8),
        attn_k: o(9),
        attn_v: o(10),
        trunk_w: o(11),
        trunk_b: o(12),
        gate_w: o(13),
        gate_b: o(14),
        out_w: o(15),
        out_b: o(16),
        goal_w: o(17),
        goal_b: o(18),
        total: offset,
    };
    (tensors, layout)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: AgentConfig,
    pub tensors: Vec<Tensor>,
    pub layout: Layout,
    pub data: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("layout mismatch: {0}")]
    Layout(String),
}

impl Parameters {
    pub fn zeros(config: &AgentConfig) -> Self {
        let (tensors, layout) = build_layout(config);
        Parameters {
            config: config.clone(),
            tensors,
            layout,
            data: vec![0.0; layout.total],
        }
    }

    /// Weights uniform in ±sqrt(3/fan_in), embeddings in ±1, biases zero, and the
    /// output layer zero so the initial policy is uniform.
    pub fn init(config: &AgentConfig, seed: u64) -> Self {
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in p.tensors.clone() {
            let scale = match t.name.as_str() {
                "cell_embed" | "word_embed" | "null_instr" => 1.0,
                "out_w" | "goal_w" => 0.0,
                n if t.shape.len() == 2 && !n.ends_with("_b") => (3.0 / t.shape[1] as f64).sqrt(),
                _ => 0.0,
            };
            if scale > 0.0 {
                for x in &mut p.data[t.range()] {
                    *x = rng.gen_range(-scale..scale);
                }
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.tensors.iter().find(|t| t.name == name)?.range();
        Some(&mut self.data[r])
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Per-tensor L2 norms, for diagnostics.
    pub fn tensor_norms(&self) -> Vec<(String, f64)> {
        self.tensors
            .iter()
            .map(|t| (t.name.clone(), self.data[t.range()].iter().map(|x| x * x).sum::<f64>().sqrt()))
            .collect()
    }

    pub fn hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for x in &self.data {
            bytes.extend_from_slice(&x.to_bits().to_le_bytes());
        }
        fnv1a64(&bytes)
    }

    /// Embedding row for a frame cell.
    pub fn cell_row(&self, cell: Cell) -> &[f64] {
        let c = self.config.cell_dim;
        let o = self.layout.cell_embed + cell.joint_id() * c;
        &self.data[o..o + c]
    }
}

/// Parameters plus optimizer state, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters,
    pub velocity: Vec<f64>,
    pub step: u64,
    /// Free-form provenance (seed, data, condition), as JSON.
    pub meta: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u16(CHECKPOINT_VERSION);
        w.str(&self.params.config.to_toml());
        w.str(&self.meta);
        w.u64(self.step);
        w.seq(&self.params.tensors, |w, t| {
            w.str(&t.name);
            w.u64(t.offset as u64);
            w.seq(&t.shape, |w, &d| w.u32(d as u32));
        });
        w.seq(&self.params.data, |w, &x| w.f64(x));
        w.seq(&self.velocity, |w, &x| w.f64(x));
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let config = AgentConfig::from_toml(&r.string()?)?;
        let meta = r.string()?;
        let step = r.u64()?;
        let tensors = r.seq(|r| {
            Ok(Tensor {
                name: r.string()?,
                offset: r.u64()? as usize,
                shape: r.seq(|r| Ok(r.u32()? as usize))?,
            })
        })?;
        let data = r.seq(|r| r.f64())?;
        let velocity = r.seq(|r| r.f64())?;
        r.finish()?;
        let mut params = Parameters::zeros(&config);
        if params.tensors != tensors {
            return Err(CheckpointError::Layout("tensor table differs from config".into()));
        }
        if data.len() != params.len() || (velocity.len() != params.len() && !velocity.is_empty()) {
            return Err(CheckpointError::Layout(format!(
                "{} values for {} parameters",
                data.len(),
                params.len()
            )));
        }
        params.data = data;
        Ok(Checkpoint {
            params,
            velocity,
            step,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}
