use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapipe::ExampleOptions;
use crate::worldcore::{KEY_COUNT, MOUSE_BUCKETS};

#[derive(Debug, Error, PartialEq)]
#[error("agent config: {0}")]
pub struct ConfigError(pub String);

/// Network sizes and optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub embed_dim: usize,
    /// Past state vectors attended to (the memory window M).
    pub memory_window: usize,
    pub chunk_len: usize,
    pub key_count: usize,
    pub mouse_buckets: usize,
    /// Guidance scale λ.
    pub cfg_scale: f64,
    pub instruction_dropout: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    /// Per-cell embedding width.
    pub cell_dim: usize,
    /// Hidden width of the frame encoder.
    pub encoder_hidden: usize,
    /// Hidden width of the policy trunk.
    pub trunk_hidden: usize,
    /// Hashed instruction vocabulary size.
    pub vocab_size: usize,
    pub goal_weight: f64,
    pub batch_size: usize,
    pub steps: u64,
    /// Chunk start stride when cutting training examples.
    pub example_stride: usize,
    /// Ticks between an observation and the first action it trains.
    pub offset_k: u32,
    /// Decode by sampling (temperature 1) instead of argmax.
    pub sample: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            embed_dim: 64,
            memory_window: 16,
            chunk_len: 8,
            key_count: KEY_COUNT,
            mouse_buckets: MOUSE_BUCKETS,
            cfg_scale: 1.0,
            instruction_dropout: 0.1,
            learning_rate: 0.05,
            momentum: 0.9,
            grad_clip: 5.0,
            seed: 0,
            cell_dim: 8,
            encoder_hidden: 64,
            trunk_hidden: 128,
            vocab_size: 512,
            goal_weight: 0.1,
            batch_size: 32,
            steps: 2000,
            example_stride: 1,
            offset_k: 2,
            sample: false,
        }
    }
}

impl AgentConfig {
    /// Logits per chunk step: keys, two mouse axes, two buttons.
    pub fn step_width(&self) -> usize {
        self.key_count + 2 * self.mouse_buckets + 2
    }

    pub fn logit_count(&self) -> usize {
        self.chunk_len * self.step_width()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError(m.to_string()));
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("memory_window", self.memory_window),
            ("chunk_len", self.chunk_len),
            ("cell_dim", self.cell_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("trunk_hidden", self.trunk_hidden),
            ("vocab_size", self.vocab_size),
            ("batch_size", self.batch_size),
            ("example_stride", self.example_stride),
        ] {
            if v == 0 {
                return Err(ConfigError(format!("{name} must be positive")));
            }
        }
        if self.key_count != KEY_COUNT || self.mouse_buckets != MOUSE_BUCKETS {
            return err("key_count and mouse_buckets are fixed by the action space (16, 7)");
        }
        if !(0.0..1.0).contains(&self.instruction_dropout) {
            return err("instruction_dropout must be in [0, 1)");
        }
        if !(self.cfg_scale.is_finite() && self.cfg_scale >= 0.0) {
            return err("cfg_scale must be finite and non-negative");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return err("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return err("momentum must be in [0, 1)");
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return err("grad_clip must be finite and non-negative");
        }
        if !(self.goal_weight.is_finite() && self.goal_weight >= 0.0) {
            return err("goal_weight must be finite and non-negative");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: AgentConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// How training examples are cut for this agent.
    pub fn example_options(&self) -> ExampleOptions {
        ExampleOptions {
            chunk_len: self.chunk_len,
            stride: self.example_stride,
            offset_k: u64::from(self.offset_k),
        }
    }

    /// A very small network for gradient checks and unit tests.
    pub fn tiny() -> Self {
        AgentConfig {
            embed_dim: 4,
            memory_window: 2,
            cell_dim: 2,
            encoder_hidden: 3,
            trunk_hidden: 5,
            vocab_size: 8,
            batch_size: 2,
            ..AgentConfig::default()
        }
    }

    /// The configuration used for the ablation suite on one CPU core: a short memory
    /// window and 3000 steps, about 40 s per agent.
    pub fn desk() -> Self {
        AgentConfig {
            memory_window: 4,
            steps: 3000,
            ..AgentConfig::default()
        }
    }
}
