//! Behavioral cloning with instruction dropout and momentum SGD.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{AgentConfig, ConfigError};
use super::logits::bc_loss_grad;
use super::model::{encode_observation, example_backward, example_forward};
use super::params::{Checkpoint, Parameters};
use crate::datapipe::{make_examples, DatasetManifest, ExampleOptions, ManifestError, MixtureSampler, Shard, TrainingExample};
use crate::worldcore::{Frame, TaskSpec, WorldId};
use crate::worlds::registry_list;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("no training examples")]
    Empty,
    #[error("step {step}: non-finite {what}; parameter norm {param_norm:.4e}; largest tensors {top:?}")]
    NonFinite {
        step: u64,
        what: &'static str,
        param_norm: f64,
        top: Vec<(String, f64)>,
    },
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub frames: Vec<Frame>,
    pub world: WorldId,
    pub task_id: Option<String>,
}

/// Episodes and their examples, grouped by collection and then by segment.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub manifest: DatasetManifest,
    pub episodes: Vec<Episode>,
    pub collections: Vec<Vec<Vec<TrainingExample>>>,
}

impl TrainingSet {
    /// Cuts examples from every kept segment. With `strip_language` every instruction is
    /// replaced by the empty string.
    pub fn from_shards(
        manifest: DatasetManifest,
        shards: &[Vec<Shard>],
        opts: &ExampleOptions,
        strip_language: bool,
    ) -> Result<Self, TrainError> {
        let tasks: HashMap<String, TaskSpec> = registry_list(None).into_iter().map(|t| (t.task_id.clone(), t)).collect();
        let mut episodes = Vec::new();
        let mut collections = Vec::new();
        for coll in shards {
            let mut segs = Vec::new();
            for shard in coll {
                let traj = &shard.trajectory;
                let ep = episodes.len();
                let task = traj.header.task_id.as_ref().and_then(|id| tasks.get(id));
                episodes.push(Episode {
                    frames: traj.observations.iter().map(|o| o.frame.clone()).collect(),
                    world: traj.header.world_id,
                    task_id: traj.header.task_id.clone(),
                });
                for seg in &shard.segments {
                    let mut ex = make_examples(ep, traj, seg, task, opts);
                    if strip_language {
                        ex.iter_mut().for_each(|e| e.instruction.clear());
                    }
                    if !ex.is_empty() {
                        segs.push(ex);
                    }
                }
            }
            collections.push(segs);
        }
        let set = TrainingSet {
            manifest,
            episodes,
            collections,
        };
        if set.example_count() == 0 {
            return Err(TrainError::Empty);
        }
        Ok(set)
    }

    pub fn example_count(&self) -> usize {
        self.collections.iter().flatten().map(Vec::len).sum()
    }

    /// Manifest restricted to `worlds`, with the matching collections.
    pub fn restrict(&self, worlds: &[WorldId]) -> Result<TrainingSet, TrainError> {
        let keep: Vec<usize> = (0..self.manifest.entries.len())
            .filter(|&i| worlds.contains(&self.manifest.entries[i].world))
            .collect();
        let manifest = DatasetManifest::new(keep.iter().map(|&i| self.manifest.entries[i].clone()).collect());
        manifest.validate()?;
        Ok(TrainingSet {
            manifest,
            episodes: self.episodes.clone(),
            collections: keep.iter().map(|&i| self.collections[i].clone()).collect(),
        })
    }

    /// `n` examples for one step: collection by weight, segment uniformly, then an
    /// example uniformly within the segment.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<&TrainingExample>, TrainError> {
        let sizes: Vec<usize> = self.collections.iter().map(Vec::len).collect();
        let mut sampler = MixtureSampler::new(&self.manifest, &sizes, rng.gen())?;
        Ok((0..n)
            .map(|_| {
                let (c, s) = sampler.sample();
                let seg = &self.collections[c][s];
                &seg[rng.gen_range(0..seg.len())]
            })
            .collect())
    }

    pub fn frame(&self, ex: &TrainingExample) -> &Frame {
        &self.episodes[ex.episode].frames[ex.obs_tick as usize]
    }

    /// Up to `m` frames preceding the example's observation, oldest first.
    pub fn memory_frames(&self, ex: &TrainingExample, m: usize) -> Vec<&Frame> {
        let t = ex.obs_tick as usize;
        self.episodes[ex.episode].frames[t.saturating_sub(m)..t].iter().collect()
    }
}

/// One example ready for a gradient step.
#[derive(Debug, Clone)]
pub struct BatchItem<'a> {
    pub frame: &'a Frame,
    pub memory: Vec<&'a Frame>,
    pub instruction: &'a str,
    pub example: &'a TrainingExample,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub action_loss: f64,
    pub goal_loss: f64,
    pub grad_norm: f64,
    pub dropped: usize,
}

/// Mean loss and its gradient over `batch`; `drop[i]` replaces item i's instruction
/// with the empty string. Memory vectors are computed from the current parameters and
/// treated as constants.
pub fn loss_and_grad(p: &Parameters, batch: &[BatchItem<'_>], drop: &[bool]) -> (StepMetrics, Vec<f64>) {
    let mut grad = vec![0.0; p.len()];
    let mut m = StepMetrics::default();
    let mut dlogits = vec![0.0; p.config.logit_count()];
    let scale = 1.0 / batch.len().max(1) as f64;
    for (item, &dropped) in batch.iter().zip(drop) {
        let mem: Vec<Vec<f64>> = item.memory.iter().map(|f| encode_observation(p, f)).collect();
        let mem_refs: Vec<&[f64]> = mem.iter().map(Vec::as_slice).collect();
        let text = if dropped { "" } else { item.instruction };
        let cache = example_forward(p, item.frame, text, &mem_refs);
        let ex = item.example;
        let (parts, dgoal) = bc_loss_grad(
            &cache.head.logits,
            cache.head.goal_logit,
            &ex.actions,
            &ex.mask,
            &ex.goal_labels,
            p.config.goal_weight,
            &mut dlogits,
        );
        m.action_loss += parts.action * scale;
        m.goal_loss += parts.goal * scale;
        dlogits.iter_mut().for_each(|g| *g *= scale);
        example_backward(p, &cache, &dlogits, dgoal * scale, &mut grad);
        m.dropped += usize::from(dropped);
    }
    m.loss = m.action_loss + m.goal_loss;
    m.grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    (m, grad)
}

/// Parameters plus momentum state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: Parameters,
    pub velocity: Vec<f64>,
    pub step: u64,
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

impl Trainer {
    pub fn new(config: &AgentConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let params = Parameters::init(config, config.seed);
        let n = params.len();
        Ok(Trainer {
            params,
            velocity: vec![0.0; n],
            step: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        let n = ck.params.len();
        Trainer {
            velocity: if ck.velocity.is_empty() { vec![0.0; n] } else { ck.velocity },
            params: ck.params,
            step: ck.step,
        }
    }

    pub fn checkpoint(&self, meta: &str) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            velocity: self.velocity.clone(),
            step: self.step,
            meta: meta.to_string(),
        }
    }

    fn non_finite(&self, what: &'static str) -> TrainError {
        let mut top = self.params.tensor_norms();
        top.sort_by(|a, b| b.1.total_cmp(&a.1));
        top.truncate(3);
        TrainError::NonFinite {
            step: self.step,
            what,
            param_norm: self.params.norm(),
            top,
        }
    }

    /// One momentum-SGD step. A non-finite loss or gradient leaves the parameters untouched.
    pub fn train_step(&mut self, batch: &[BatchItem<'_>], drop: &[bool]) -> Result<StepMetrics, TrainError> {
        let (mut m, mut grad) = loss_and_grad(&self.params, batch, drop);
        if !m.loss.is_finite() {
            return Err(self.non_finite("loss"));
        }
        if !m.grad_norm.is_finite() {
            return Err(self.non_finite("gradient"));
        }
        let c = &self.params.config;
        if c.grad_clip > 0.0 && m.grad_norm > c.grad_clip {
            let s = c.grad_clip / m.grad_norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        let (lr, mu) = (c.learning_rate, c.momentum);
        for ((p, v), g) in self.params.data.iter_mut().zip(&mut self.velocity).zip(&grad) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
        m.step = self.step;
        self.step += 1;
        Ok(m)
    }

    /// Draws the batch and dropout mask for the current step from `(seed, step)` and
    /// applies it, so a resumed run continues identically.
    pub fn train_on(&mut self, set: &TrainingSet) -> Result<StepMetrics, TrainError> {
        let c = self.params.config.clone();
        let mut rng = step_rng(c.seed, self.step);
        let examples = set.sample(c.batch_size, &mut rng)?;
        let drop: Vec<bool> = examples.iter().map(|_| rng.gen::<f64>() < c.instruction_dropout).collect();
        let batch: Vec<BatchItem<'_>> = examples
            .iter()
            .map(|ex| BatchItem {
                frame: set.frame(ex),
                memory: set.memory_frames(ex, c.memory_window),
                instruction: &ex.instruction,
                example: ex,
            })
            .collect();
        self.train_step(&batch, &drop)
    }
}

/// Trains for `config.steps` steps, calling `on_step` after each.
pub fn train(
    set: &TrainingSet,
    config: &AgentConfig,
    mut on_step: impl FnMut(&Trainer, &StepMetrics),
) -> Result<Trainer, TrainError> {
    let mut t = Trainer::new(config)?;
    while t.step < config.steps {
        let m = t.train_on(set)?;
        on_step(&t, &m);
    }
    Ok(t)
}
