//! Encoders, the memory-attention policy, and its backward pass.

use std::collections::VecDeque;

use super::logits::PolicyLogits;
use super::params::{Layout, Parameters};
use crate::codec::fnv1a64;
use crate::worldcore::{Frame, FRAME_CELLS};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out = W x + b` for row-major `W` of shape `rows × x.len()`.
fn affine(w: &[f64], b: Option<&[f64]>, x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(&w[r * cols..(r + 1) * cols], x) + b.map_or(0.0, |b| b[r]);
    }
}

/// `out += Wᵀ d`.
fn affine_t_acc(w: &[f64], d: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr != 0.0 {
            for (o, wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *o += dr * wv;
            }
        }
    }
}

/// `G += d xᵀ`.
fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr != 0.0 {
            for (gv, xv) in g[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *gv += dr * xv;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    super::logits::sigmoid(x)
}

/// Intermediate values of one frame encoding.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    joint: Vec<usize>,
    x: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    pub state: Vec<f64>,
}

pub fn encode_cached(p: &Parameters, frame: &Frame) -> EncodeCache {
    let c = &p.config;
    let l = &p.layout;
    let cd = c.cell_dim;
    let joint: Vec<usize> = frame.cells().iter().map(|cell| cell.joint_id()).collect();
    let mut x = vec![0.0; FRAME_CELLS * cd];
    for (i, &j) in joint.iter().enumerate() {
        x[i * cd..(i + 1) * cd].copy_from_slice(&p.data[l.cell_embed + j * cd..l.cell_embed + (j + 1) * cd]);
    }
    let he = c.encoder_hidden;
    let mut a1 = vec![0.0; he];
    affine(
        &p.data[l.enc_w1..l.enc_w1 + he * x.len()],
        Some(&p.data[l.enc_b1..l.enc_b1 + he]),
        &x,
        &mut a1,
    );
    let h1: Vec<f64> = a1.iter().map(|v| v.max(0.0)).collect();
    let d = c.embed_dim;
    let mut state = vec![0.0; d];
    affine(&p.data[l.enc_w2..l.enc_w2 + d * he], Some(&p.data[l.enc_b2..l.enc_b2 + d]), &h1, &mut state);
    state.iter_mut().for_each(|v| *v = v.tanh());
    EncodeCache { joint, x, a1, h1, state }
}

/// Frame → state vector: per-cell (symbol, color) embeddings, a ReLU mixing layer over
/// all cells, then a tanh projection to `embed_dim`.
pub fn encode_observation(p: &Parameters, frame: &Frame) -> Vec<f64> {
    encode_cached(p, frame).state
}

fn encode_backward(p: &Parameters, cache: &EncodeCache, dstate: &[f64], grad: &mut [f64]) {
    let c = &p.config;
    let l = &p.layout;
    let (d, he, cd) = (c.embed_dim, c.encoder_hidden, c.cell_dim);
    let da2: Vec<f64> = dstate.iter().zip(&cache.state).map(|(g, s)| g * (1.0 - s * s)).collect();
    outer_acc(&mut grad[l.enc_w2..l.enc_w2 + d * he], &da2, &cache.h1);
    for (g, v) in grad[l.enc_b2..l.enc_b2 + d].iter_mut().zip(&da2) {
        *g += v;
    }
    let mut dh1 = vec![0.0; he];
    affine_t_acc(&p.data[l.enc_w2..l.enc_w2 + d * he], &da2, &mut dh1);
    let da1: Vec<f64> = dh1.iter().zip(&cache.a1).map(|(g, a)| if *a > 0.0 { *g } else { 0.0 }).collect();
    let nx = cache.x.len();
    outer_acc(&mut grad[l.enc_w1..l.enc_w1 + he * nx], &da1, &cache.x);
    for (g, v) in grad[l.enc_b1..l.enc_b1 + he].iter_mut().zip(&da1) {
        *g += v;
    }
    let mut dx = vec![0.0; nx];
    affine_t_acc(&p.data[l.enc_w1..l.enc_w1 + he * nx], &da1, &mut dx);
    for (i, &j) in cache.joint.iter().enumerate() {
        let row = &mut grad[l.cell_embed + j * cd..l.cell_embed + (j + 1) * cd];
        for (g, v) in row.iter_mut().zip(&dx[i * cd..(i + 1) * cd]) {
            *g += v;
        }
    }
}

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub fn token_id(token: &str, vocab_size: usize) -> usize {
    (fnv1a64(token.as_bytes()) % vocab_size as u64) as usize
}

/// Hashed token ids of an instruction; empty for the unconditioned input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionCache {
    ids: Vec<usize>,
}

pub fn instruction_cached(p: &Parameters, text: &str) -> (InstructionCache, Vec<f64>) {
    let d = p.config.embed_dim;
    let l = &p.layout;
    let ids: Vec<usize> = tokenize(text).iter().map(|t| token_id(t, p.config.vocab_size)).collect();
    let mut u = vec![0.0; d];
    if ids.is_empty() {
        u.copy_from_slice(&p.data[l.null_instr..l.null_instr + d]);
    } else {
        for &id in &ids {
            for (a, b) in u.iter_mut().zip(&p.data[l.word_embed + id * d..l.word_embed + (id + 1) * d]) {
                *a += b;
            }
        }
        let n = ids.len() as f64;
        u.iter_mut().for_each(|v| *v /= n);
    }
    (InstructionCache { ids }, u)
}

/// Mean of hashed token embeddings; the empty instruction maps to a learned null vector.
pub fn encode_instruction(p: &Parameters, text: &str) -> Vec<f64> {
    instruction_cached(p, text).1
}

fn instruction_backward(p: &Parameters, cache: &InstructionCache, du: &[f64], grad: &mut [f64]) {
    let d = p.config.embed_dim;
    let l = &p.layout;
    if cache.ids.is_empty() {
        for (g, v) in grad[l.null_instr..l.null_instr + d].iter_mut().zip(du) {
            *g += v;
        }
    } else {
        let n = cache.ids.len() as f64;
        for &id in &cache.ids {
            for (g, v) in grad[l.word_embed + id * d..l.word_embed + (id + 1) * d].iter_mut().zip(du) {
                *g += v / n;
            }
        }
    }
}

/// Ring of past state vectors with the ticks they were observed at.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MemoryState {
    capacity: usize,
    entries: VecDeque<(u64, Vec<f64>)>,
}

impl MemoryState {
    pub fn new(capacity: usize) -> Self {
        MemoryState {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn ticks(&self) -> Vec<u64> {
        self.entries.iter().map(|(t, _)| *t).collect()
    }

    pub fn vectors(&self) -> Vec<&[f64]> {
        self.entries.iter().map(|(_, v)| v.as_slice()).collect()
    }

    /// Appends, evicting the oldest beyond capacity. Ticks must increase.
    pub fn push(&mut self, tick: u64, state: Vec<f64>) {
        assert!(
            self.entries.back().map_or(true, |(t, _)| *t < tick),
            "memory ticks must be strictly increasing"
        );
        self.entries.push_back((tick, state));
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Intermediate values of the policy head.
#[derive(Debug, Clone)]
pub struct HeadCache {
    state: Vec<f64>,
    u: Vec<f64>,
    tokens: Vec<Vec<f64>>,
    q: Vec<f64>,
    keys: Vec<Vec<f64>>,
    vals: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    z: Vec<f64>,
    a: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
    pub logits: PolicyLogits,
    pub goal_logit: f64,
}

impl HeadCache {
    pub fn goal_prob(&self) -> f64 {
        sigmoid(self.goal_logit)
    }
}

fn slice(p: &Parameters, offset: usize, len: usize) -> &[f64] {
    &p.data[offset..offset + len]
}

/// Attention from an instruction-and-state query over `[memory ∥ state]`, then a gated
/// ReLU trunk feeding the action logits and the goal-completion logit.
pub fn head_forward(p: &Parameters, state: &[f64], u: &[f64], memory: &[&[f64]]) -> HeadCache {
    let c = &p.config;
    let l: &Layout = &p.layout;
    let d = c.embed_dim;
    let ht = c.trunk_hidden;
    let mut qin = Vec::with_capacity(2 * d);
    qin.extend_from_slice(u);
    qin.extend_from_slice(state);
    let mut q = vec![0.0; d];
    affine(slice(p, l.attn_q, 2 * d * d), Some(slice(p, l.attn_bq, d)), &qin, &mut q);
    let tokens: Vec<Vec<f64>> = memory.iter().map(|m| m.to_vec()).chain(std::iter::once(state.to_vec())).collect();
    let scale = 1.0 / (d as f64).sqrt();
    let mut keys = Vec::with_capacity(tokens.len());
    let mut vals = Vec::with_capacity(tokens.len());
    let mut scores = Vec::with_capacity(tokens.len());
    for t in &tokens {
        let mut k = vec![0.0; d];
        affine(slice(p, l.attn_k, d * d), None, t, &mut k);
        let mut v = vec![0.0; d];
        affine(slice(p, l.attn_v, d * d), None, t, &mut v);
        scores.push(dot(&q, &k) * scale);
        keys.push(k);
        vals.push(v);
    }
    let alpha = super::logits::softmax(&scores);
    let mut ctx = vec![0.0; d];
    for (a, v) in alpha.iter().zip(&vals) {
        for (cv, vv) in ctx.iter_mut().zip(v) {
            *cv += a * vv;
        }
    }
    let mut z = Vec::with_capacity(3 * d);
    z.extend_from_slice(state);
    z.extend_from_slice(&ctx);
    z.extend_from_slice(u);
    let mut a = vec![0.0; ht];
    affine(slice(p, l.trunk_w, ht * 3 * d), Some(slice(p, l.trunk_b, ht)), &z, &mut a);
    let mut gpre = vec![0.0; ht];
    affine(slice(p, l.gate_w, ht * d), Some(slice(p, l.gate_b, ht)), u, &mut gpre);
    let g: Vec<f64> = gpre.iter().map(|&x| sigmoid(x)).collect();
    let h: Vec<f64> = a.iter().zip(&g).map(|(av, gv)| av.max(0.0) * gv).collect();
    let nl = c.logit_count();
    let mut out = vec![0.0; nl];
    affine(slice(p, l.out_w, nl * ht), Some(slice(p, l.out_b, nl)), &h, &mut out);
    let goal_logit = dot(slice(p, l.goal_w, ht), &h) + p.data[l.goal_b];
    HeadCache {
        state: state.to_vec(),
        u: u.to_vec(),
        tokens,
        q,
        keys,
        vals,
        alpha,
        z,
        a,
        g,
        h,
        logits: PolicyLogits::from_values(out),
        goal_logit,
    }
}

/// Accumulates parameter gradients; returns (d state, d instruction vector). Memory
/// entries receive no gradient.
pub fn head_backward(p: &Parameters, cache: &HeadCache, dlogits: &[f64], dgoal: f64, grad: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
    let c = &p.config;
    let l = &p.layout;
    let d = c.embed_dim;
    let ht = c.trunk_hidden;
    let nl = c.logit_count();
    outer_acc(&mut grad[l.out_w..l.out_w + nl * ht], dlogits, &cache.h);
    for (g, v) in grad[l.out_b..l.out_b + nl].iter_mut().zip(dlogits) {
        *g += v;
    }
    let mut dh = vec![0.0; ht];
    affine_t_acc(slice(p, l.out_w, nl * ht), dlogits, &mut dh);
    for (i, g) in grad[l.goal_w..l.goal_w + ht].iter_mut().enumerate() {
        *g += dgoal * cache.h[i];
    }
    grad[l.goal_b] += dgoal;
    for (v, w) in dh.iter_mut().zip(slice(p, l.goal_w, ht)) {
        *v += dgoal * w;
    }
    let mut da = vec![0.0; ht];
    let mut dgpre = vec![0.0; ht];
    for i in 0..ht {
        let r = cache.a[i].max(0.0);
        if cache.a[i] > 0.0 {
            da[i] = dh[i] * cache.g[i];
        }
        dgpre[i] = dh[i] * r * cache.g[i] * (1.0 - cache.g[i]);
    }
    outer_acc(&mut grad[l.trunk_w..l.trunk_w + ht * 3 * d], &da, &cache.z);
    for (g, v) in grad[l.trunk_b..l.trunk_b + ht].iter_mut().zip(&da) {
        *g += v;
    }
    outer_acc(&mut grad[l.gate_w..l.gate_w + ht * d], &dgpre, &cache.u);
    for (g, v) in grad[l.gate_b..l.gate_b + ht].iter_mut().zip(&dgpre) {
        *g += v;
    }
    let mut dz = vec![0.0; 3 * d];
    affine_t_acc(slice(p, l.trunk_w, ht * 3 * d), &da, &mut dz);
    let mut du = vec![0.0; d];
    affine_t_acc(slice(p, l.gate_w, ht * d), &dgpre, &mut du);
    let mut ds = dz[..d].to_vec();
    let dctx = &dz[d..2 * d];
    for (a, b) in du.iter_mut().zip(&dz[2 * d..]) {
        *a += b;
    }
    // Attention.
    let n = cache.tokens.len();
    let scale = 1.0 / (d as f64).sqrt();
    let dalpha: Vec<f64> = cache.vals.iter().map(|v| dot(dctx, v)).collect();
    let mean: f64 = cache.alpha.iter().zip(&dalpha).map(|(a, g)| a * g).sum();
    let dscore: Vec<f64> = cache.alpha.iter().zip(&dalpha).map(|(a, g)| a * (g - mean)).collect();
    let mut dq = vec![0.0; d];
    for j in 0..n {
        let dsj = dscore[j] * scale;
        for (a, k) in dq.iter_mut().zip(&cache.keys[j]) {
            *a += dsj * k;
        }
        let dk: Vec<f64> = cache.q.iter().map(|qv| dsj * qv).collect();
        let dv: Vec<f64> = dctx.iter().map(|g| cache.alpha[j] * g).collect();
        outer_acc(&mut grad[l.attn_k..l.attn_k + d * d], &dk, &cache.tokens[j]);
        outer_acc(&mut grad[l.attn_v..l.attn_v + d * d], &dv, &cache.tokens[j]);
        if j == n - 1 {
            affine_t_acc(slice(p, l.attn_k, d * d), &dk, &mut ds);
            affine_t_acc(slice(p, l.attn_v, d * d), &dv, &mut ds);
        }
    }
    let mut qin = Vec::with_capacity(2 * d);
    qin.extend_from_slice(&cache.u);
    qin.extend_from_slice(&cache.state);
    outer_acc(&mut grad[l.attn_q..l.attn_q + 2 * d * d], &dq, &qin);
    for (g, v) in grad[l.attn_bq..l.attn_bq + d].iter_mut().zip(&dq) {
        *g += v;
    }
    let mut dqin = vec![0.0; 2 * d];
    affine_t_acc(slice(p, l.attn_q, 2 * d * d), &dq, &mut dqin);
    for (a, b) in du.iter_mut().zip(&dqin[..d]) {
        *a += b;
    }
    for (a, b) in ds.iter_mut().zip(&dqin[d..]) {
        *a += b;
    }
    (ds, du)
}

/// Output of one policy step.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: PolicyLogits,
    pub goal_prob: f64,
    pub memory: MemoryState,
}

/// One step at `tick`: logits and goal probability for `state` under `instruction`,
/// and the memory with `state` appended.
pub fn forward(p: &Parameters, state: &[f64], instruction: &[f64], memory: &MemoryState, tick: u64) -> ForwardOutput {
    let cache = head_forward(p, state, instruction, &memory.vectors());
    let mut next = memory.clone();
    next.push(tick, state.to_vec());
    ForwardOutput {
        goal_prob: cache.goal_prob(),
        logits: cache.logits,
        memory: next,
    }
}

/// Everything needed to backpropagate one training example.
#[derive(Debug, Clone)]
pub struct ExampleCache {
    pub encode: EncodeCache,
    pub instruction: InstructionCache,
    pub head: HeadCache,
}

/// Full forward for training; `memory` vectors are constants.
pub fn example_forward(p: &Parameters, frame: &Frame, instruction: &str, memory: &[&[f64]]) -> ExampleCache {
    let encode = encode_cached(p, frame);
    let (instruction, u) = instruction_cached(p, instruction);
    let head = head_forward(p, &encode.state, &u, memory);
    ExampleCache {
        encode,
        instruction,
        head,
    }
}

pub fn example_backward(p: &Parameters, cache: &ExampleCache, dlogits: &[f64], dgoal: f64, grad: &mut [f64]) {
    let (ds, du) = head_backward(p, &cache.head, dlogits, dgoal, grad);
    encode_backward(p, &cache.encode, &ds, grad);
    instruction_backward(p, &cache.instruction, &du, grad);
}
