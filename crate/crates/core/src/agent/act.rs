//! The policy as a session client.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::logits::{cfg_combine, PolicyLogits};
use super::model::{encode_instruction, encode_observation, head_forward, MemoryState};
use super::params::Parameters;
use crate::netproto::{offset_chunk, ActionChunk, Message, SessionClient};
use crate::worldcore::Observation;

#[derive(Debug, Clone)]
pub struct ActOptions {
    pub cfg_scale: f64,
    pub offset_k: u32,
    pub sample: bool,
    pub seed: u64,
    /// Always act on the empty instruction.
    pub ignore_instruction: bool,
    /// Reported as inference time to simulated sessions.
    pub compute_ms: f64,
}

impl ActOptions {
    pub fn from_params(p: &Parameters) -> Self {
        ActOptions {
            cfg_scale: p.config.cfg_scale,
            offset_k: p.config.offset_k,
            sample: p.config.sample,
            seed: p.config.seed,
            ignore_instruction: false,
            compute_ms: 0.0,
        }
    }
}

/// Runs a forward pass per observation, combines conditioned and unconditioned logits,
/// and answers with a chunk offset by `offset_k` ticks. Memory persists for the episode.
#[derive(Debug, Clone)]
pub struct AgentClient {
    params: Arc<Parameters>,
    opts: ActOptions,
    instruction: String,
    u_cond: Vec<f64>,
    u_null: Vec<f64>,
    memory: MemoryState,
    rng: ChaCha8Rng,
    /// `(tick, text)` for every instruction change, including the initial one at tick 0.
    pub instruction_log: Vec<(u64, String)>,
    pub forwards: u64,
    last_tick: Option<u64>,
}

impl AgentClient {
    pub fn new(params: Arc<Parameters>, instruction: &str, opts: ActOptions) -> Self {
        let u_null = encode_instruction(&params, "");
        let mut c = AgentClient {
            memory: MemoryState::new(params.config.memory_window),
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            u_cond: u_null.clone(),
            u_null,
            params,
            opts,
            instruction: String::new(),
            instruction_log: Vec::new(),
            forwards: 0,
            last_tick: None,
        };
        c.set_instruction(0, instruction);
        c
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn instruction_vector(&self) -> &[f64] {
        &self.u_cond
    }

    pub fn memory(&self) -> &MemoryState {
        &self.memory
    }

    pub fn set_instruction(&mut self, tick: u64, text: &str) {
        self.instruction = text.to_string();
        let effective = if self.opts.ignore_instruction { "" } else { text };
        self.u_cond = encode_instruction(&self.params, effective);
        self.instruction_log.push((tick, text.to_string()));
    }

    pub fn reset(&mut self) {
        self.memory.clear();
        self.last_tick = None;
    }

    /// Guided logits for a frame's state vector, without touching memory.
    pub fn logits(&self, state: &[f64]) -> PolicyLogits {
        let mem = self.memory.vectors();
        let cond = head_forward(&self.params, state, &self.u_cond, &mem).logits;
        if self.opts.cfg_scale == 0.0 {
            return cond;
        }
        let uncond = head_forward(&self.params, state, &self.u_null, &mem).logits;
        cfg_combine(&cond, &uncond, self.opts.cfg_scale).expect("same head, same shape")
    }
}

impl SessionClient for AgentClient {
    fn on_observation(&mut self, obs: &Observation) -> Option<ActionChunk> {
        if self.last_tick.is_some_and(|t| t >= obs.tick) {
            return None;
        }
        let state = encode_observation(&self.params, &obs.frame);
        let logits = self.logits(&state);
        self.forwards += 1;
        let first = obs.tick + u64::from(self.opts.offset_k);
        let actions = if self.opts.sample {
            logits.sample(first, &mut self.rng)
        } else {
            logits.argmax(first)
        };
        self.memory.push(obs.tick, state);
        self.last_tick = Some(obs.tick);
        Some(offset_chunk(&actions, obs.tick, self.opts.offset_k))
    }

    fn on_control(&mut self, msg: &Message) {
        match msg {
            Message::Instruction { tick, text } | Message::Interrupt { tick, text } => self.set_instruction(*tick, text),
            Message::Reset { .. } | Message::LoadState { .. } => self.reset(),
            _ => {}
        }
    }

    fn compute_ms(&self) -> f64 {
        self.opts.compute_ms
    }
}
