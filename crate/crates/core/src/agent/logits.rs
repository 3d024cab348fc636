//! Factored action logits, guidance, decoding and the behavioral-cloning loss.

use rand::Rng;
use thiserror::Error;

use crate::worldcore::{ActionEvent, Key, KeySet, KEY_COUNT, MOUSE_BUCKETS, MOUSE_BUCKET_MAX};

/// Logits per chunk step.
pub const STEP_WIDTH: usize = KEY_COUNT + 2 * MOUSE_BUCKETS + 2;
const DX: usize = KEY_COUNT;
const DY: usize = KEY_COUNT + MOUSE_BUCKETS;
const BUTTONS: usize = KEY_COUNT + 2 * MOUSE_BUCKETS;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("logit shape mismatch: {left} vs {right} steps")]
pub struct ShapeError {
    pub left: usize,
    pub right: usize,
}

/// Per step: 16 independent key logits, 7 mouse-dx and 7 mouse-dy bucket logits,
/// 2 independent button logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLogits {
    pub values: Vec<f64>,
}

impl PolicyLogits {
    pub fn zeros(chunk_len: usize) -> Self {
        PolicyLogits {
            values: vec![0.0; chunk_len * STEP_WIDTH],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        assert_eq!(values.len() % STEP_WIDTH, 0, "logits must hold whole steps");
        PolicyLogits { values }
    }

    pub fn chunk_len(&self) -> usize {
        self.values.len() / STEP_WIDTH
    }

    pub fn step(&self, s: usize) -> &[f64] {
        &self.values[s * STEP_WIDTH..(s + 1) * STEP_WIDTH]
    }

    pub fn step_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.values[s * STEP_WIDTH..(s + 1) * STEP_WIDTH]
    }

    pub fn keys(&self, s: usize) -> &[f64] {
        &self.step(s)[..KEY_COUNT]
    }

    pub fn mouse_dx(&self, s: usize) -> &[f64] {
        &self.step(s)[DX..DX + MOUSE_BUCKETS]
    }

    pub fn mouse_dy(&self, s: usize) -> &[f64] {
        &self.step(s)[DY..DY + MOUSE_BUCKETS]
    }

    pub fn buttons(&self, s: usize) -> &[f64] {
        &self.step(s)[BUTTONS..]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Most likely action per step.
    pub fn argmax(&self, first_tick: u64) -> Vec<ActionEvent> {
        (0..self.chunk_len())
            .map(|s| {
                let mut a = ActionEvent::noop(first_tick + s as u64);
                for (i, &l) in self.keys(s).iter().enumerate() {
                    if l > 0.0 {
                        a.keys.insert(Key::from_index(i).expect("key index"));
                    }
                }
                a.mouse_dx = bucket_to_delta(argmax(self.mouse_dx(s)));
                a.mouse_dy = bucket_to_delta(argmax(self.mouse_dy(s)));
                a.left_button = self.buttons(s)[0] > 0.0;
                a.right_button = self.buttons(s)[1] > 0.0;
                a
            })
            .collect()
    }

    /// One draw per step at temperature 1.
    pub fn sample(&self, first_tick: u64, rng: &mut impl Rng) -> Vec<ActionEvent> {
        (0..self.chunk_len())
            .map(|s| {
                let mut a = ActionEvent::noop(first_tick + s as u64);
                let mut keys = KeySet::EMPTY;
                for (i, &l) in self.keys(s).iter().enumerate() {
                    if rng.gen::<f64>() < sigmoid(l) {
                        keys.insert(Key::from_index(i).expect("key index"));
                    }
                }
                a.keys = keys;
                a.mouse_dx = bucket_to_delta(sample_categorical(self.mouse_dx(s), rng));
                a.mouse_dy = bucket_to_delta(sample_categorical(self.mouse_dy(s), rng));
                a.left_button = rng.gen::<f64>() < sigmoid(self.buttons(s)[0]);
                a.right_button = rng.gen::<f64>() < sigmoid(self.buttons(s)[1]);
                a
            })
            .collect()
    }
}

pub fn delta_to_bucket(d: i8) -> usize {
    (d.clamp(-MOUSE_BUCKET_MAX, MOUSE_BUCKET_MAX) + MOUSE_BUCKET_MAX) as usize
}

pub fn bucket_to_delta(b: usize) -> i8 {
    b as i8 - MOUSE_BUCKET_MAX
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(logits: &[f64], rng: &mut impl Rng) -> usize {
    let p = softmax(logits);
    let mut u = rng.gen::<f64>();
    for (i, pi) in p.iter().enumerate() {
        if u < *pi {
            return i;
        }
        u -= pi;
    }
    p.len() - 1
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `cond + λ (cond − uncond)`, elementwise.
pub fn cfg_combine(cond: &PolicyLogits, uncond: &PolicyLogits, lambda: f64) -> Result<PolicyLogits, ShapeError> {
    if cond.values.len() != uncond.values.len() {
        return Err(ShapeError {
            left: cond.chunk_len(),
            right: uncond.chunk_len(),
        });
    }
    Ok(PolicyLogits {
        values: cond
            .values
            .iter()
            .zip(&uncond.values)
            .map(|(c, u)| c + lambda * (c - u))
            .collect(),
    })
}

/// Binary cross-entropy of a logit against a 0/1 target, and its derivative.
fn bce(logit: f64, target: bool) -> (f64, f64) {
    let loss = if target { softplus(-logit) } else { softplus(logit) };
    (loss, sigmoid(logit) - f64::from(u8::from(target)))
}

/// Categorical cross-entropy of logits against a class, accumulating the derivative.
fn ce(logits: &[f64], class: usize, grad: &mut [f64]) -> f64 {
    let p = softmax(logits);
    for (i, (g, pi)) in grad.iter_mut().zip(&p).enumerate() {
        *g += pi - if i == class { 1.0 } else { 0.0 };
    }
    log_sum_exp(logits) - logits[class]
}

/// Loss parts for one example.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub action: f64,
    pub goal: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.action + self.goal
    }
}

/// Summed over unmasked steps: key and button BCE plus mouse CE, plus `goal_weight`
/// times the BCE of the goal logit against each step's completion label. Gradients with
/// respect to the logits and the goal logit are written to `grad` / returned.
pub fn bc_loss_grad(
    logits: &PolicyLogits,
    goal_logit: f64,
    target: &[ActionEvent],
    mask: &[bool],
    goal_labels: &[bool],
    goal_weight: f64,
    grad: &mut [f64],
) -> (LossParts, f64) {
    let n = logits.chunk_len();
    assert!(target.len() >= n && mask.len() >= n && goal_labels.len() >= n);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut parts = LossParts::default();
    let mut dgoal = 0.0;
    for s in 0..n {
        if !mask[s] {
            continue;
        }
        let a = &target[s];
        let row = logits.step(s);
        let g = &mut grad[s * STEP_WIDTH..(s + 1) * STEP_WIDTH];
        for (i, key) in Key::ALL.iter().enumerate() {
            let (l, d) = bce(row[i], a.keys.contains(*key));
            parts.action += l;
            g[i] += d;
        }
        parts.action += ce(&row[DX..DX + MOUSE_BUCKETS], delta_to_bucket(a.mouse_dx), &mut g[DX..DX + MOUSE_BUCKETS]);
        parts.action += ce(&row[DY..DY + MOUSE_BUCKETS], delta_to_bucket(a.mouse_dy), &mut g[DY..DY + MOUSE_BUCKETS]);
        for (j, pressed) in [a.left_button, a.right_button].into_iter().enumerate() {
            let (l, d) = bce(row[BUTTONS + j], pressed);
            parts.action += l;
            g[BUTTONS + j] += d;
        }
        let (l, d) = bce(goal_logit, goal_labels[s]);
        parts.goal += goal_weight * l;
        dgoal += goal_weight * d;
    }
    (parts, dgoal)
}

/// The loss value alone; `goal_prob` is a probability here.
pub fn bc_loss(logits: &PolicyLogits, goal_prob: f64, target: &[ActionEvent], mask: &[bool], goal_labels: &[bool], goal_weight: f64) -> f64 {
    let goal_logit = (goal_prob / (1.0 - goal_prob)).ln();
    let mut grad = vec![0.0; logits.values.len()];
    bc_loss_grad(logits, goal_logit, target, mask, goal_labels, goal_weight, &mut grad).0.total()
}
