//! Running agents on tasks: episodes, instruction switches, static probes and held-out
//! log-likelihood.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::spec::EpisodeEvaluator;
use crate::agent::{bc_loss_grad, encode_instruction, encode_observation, head_forward, ActOptions, AgentClient, Parameters, TrainingSet};
use crate::datapipe::{expert_plan, ExpertError, TrainingExample};
use crate::netproto::{
    offset_chunk, run_simulated, ActionChunk, Role, ScheduleStats, SegmentSource, SessionClient, SessionConfig, SessionCore,
    SimOptions, Trajectory,
};
use crate::worldcore::{instantiate_task, ActionEvent, EpisodeOutcome, EpisodeStatus, Frame, Key, Observation, TaskError, TaskSpec, WorldState};
use crate::worlds::GoalStatus;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error("empty evaluation split")]
    EmptySplit,
    #[error("{0}")]
    Other(String),
}

/// Replays a fixed per-tick plan. Everything is sent with the first observation; plan
/// entries before the offset cannot execute and must be no-ops.
#[derive(Debug, Clone)]
pub struct ScriptedClient {
    plan: Vec<ActionEvent>,
    offset_k: u32,
    sent: bool,
}

impl ScriptedClient {
    /// `plan[t]` is the action for tick `t`.
    pub fn new(plan: Vec<ActionEvent>, offset_k: u32) -> Self {
        ScriptedClient {
            plan,
            offset_k,
            sent: false,
        }
    }
}

impl SessionClient for ScriptedClient {
    fn on_observation(&mut self, obs: &Observation) -> Option<ActionChunk> {
        if self.sent {
            return None;
        }
        self.sent = true;
        let first = (obs.tick + u64::from(self.offset_k)) as usize;
        let rest = self.plan.get(first..).unwrap_or(&[]);
        Some(offset_chunk(rest, obs.tick, self.offset_k))
    }
}

/// Who acts in an episode.
#[derive(Debug, Clone)]
pub enum AgentRef {
    /// The scripted expert for the task being run.
    Expert,
    Policy { params: Arc<Parameters>, opts: ActOptions },
    /// A fixed plan indexed by tick.
    Scripted(Vec<ActionEvent>),
    /// Never acts.
    Silent,
}

impl AgentRef {
    pub fn policy(params: Arc<Parameters>) -> Self {
        let opts = ActOptions::from_params(&params);
        AgentRef::Policy { params, opts }
    }

    fn client(&self, task: &TaskSpec, state: &WorldState, offset_k: u32) -> Result<Box<dyn SessionClient>, EvalError> {
        Ok(match self {
            AgentRef::Expert => Box::new(ScriptedClient::new(expert_plan(task, state)?, offset_k)),
            AgentRef::Policy { params, opts } => {
                let opts = ActOptions {
                    offset_k,
                    ..opts.clone()
                };
                Box::new(AgentClient::new(params.clone(), &task.instruction, opts))
            }
            AgentRef::Scripted(plan) => Box::new(ScriptedClient::new(plan.clone(), offset_k)),
            AgentRef::Silent => Box::new(crate::netproto::SilentClient),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOptions {
    pub session: SessionConfig,
    /// Seed for simulated latency jitter.
    pub sim_seed: u64,
    pub interrupts: Vec<(u64, String)>,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        EpisodeOptions {
            session: SessionConfig {
                record: false,
                ..SessionConfig::default()
            },
            sim_seed: 0,
            interrupts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub outcome: EpisodeOutcome,
    pub trajectory: Option<Trajectory>,
    pub stats: ScheduleStats,
}

/// One simulated session of `agent` on `task` from the seed's initial state, graded
/// every tick; ends on success, distractor contact, failure or budget exhaustion.
pub fn run_episode(agent: &AgentRef, task: &TaskSpec, seed: u64, opts: &EpisodeOptions) -> Result<EpisodeResult, EvalError> {
    let state = instantiate_task(task, seed)?;
    let evaluator = EpisodeEvaluator::new(task, &state)?;
    let mut client = agent.client(task, &state, opts.session.offset_k)?;
    let mut core = SessionCore::new(
        state,
        opts.session,
        seed,
        Some(task.task_id.clone()),
        Role::Agent,
        u64::from(task.budget_ticks),
    )
    .with_evaluator(evaluator);
    core.set_instruction(&task.instruction, SegmentSource::Live);
    let sim = SimOptions {
        seed: opts.sim_seed,
        interrupts: opts.interrupts.clone(),
    };
    match run_simulated(core, client.as_mut(), &sim) {
        Ok(out) => Ok(EpisodeResult {
            outcome: EpisodeOutcome {
                status: out.status,
                ticks_used: out.ticks_used,
                trace_ref: None,
            },
            trajectory: out.trajectory,
            stats: out.stats,
        }),
        Err(e) => Ok(EpisodeResult {
            outcome: EpisodeOutcome {
                status: EpisodeStatus::Failure,
                ticks_used: 0,
                trace_ref: Some(format!("agent error: {e}")),
            },
            trajectory: None,
            stats: ScheduleStats::default(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchOutcome {
    pub outcome: EpisodeOutcome,
    /// The switch came at or after the budget, so only task A was evaluated.
    pub degenerate: bool,
    pub a_completed_after_switch: bool,
    pub b_success_tick: Option<u64>,
}

/// Instruction A from tick 0, interrupted by B at `switch_tick`. Success iff B's goal
/// (evaluated from the state at the switch) is reached within B's budget and A's goal is
/// not completed after the switch.
pub fn switch_test(
    agent: &AgentRef,
    task_a: &TaskSpec,
    task_b: &TaskSpec,
    seed: u64,
    switch_tick: u64,
    opts: &EpisodeOptions,
) -> Result<SwitchOutcome, EvalError> {
    if task_a.save_state_ref != task_b.save_state_ref {
        return Err(EvalError::Other(format!(
            "{} and {} do not share an initial state",
            task_a.task_id, task_b.task_id
        )));
    }
    let budget_a = u64::from(task_a.budget_ticks);
    if switch_tick >= budget_a {
        let r = run_episode(agent, task_a, seed, opts)?;
        return Ok(SwitchOutcome {
            outcome: r.outcome,
            degenerate: true,
            a_completed_after_switch: false,
            b_success_tick: None,
        });
    }
    let state = instantiate_task(task_a, seed)?;
    let budget = switch_tick + u64::from(task_b.budget_ticks);
    let mut client = agent.client(task_a, &state, opts.session.offset_k)?;
    let session = SessionConfig {
        record: true,
        ..opts.session
    };
    let mut core = SessionCore::new(state.clone(), session, seed, Some(task_a.task_id.clone()), Role::Agent, budget);
    core.set_instruction(&task_a.instruction, SegmentSource::Live);
    let mut interrupts = opts.interrupts.clone();
    interrupts.push((switch_tick, task_b.instruction.clone()));
    let sim = SimOptions {
        seed: opts.sim_seed,
        interrupts,
    };
    let out = run_simulated(core, client.as_mut(), &sim).map_err(|e| EvalError::Other(e.to_string()))?;
    let traj = out.trajectory.expect("recording enabled");

    let mut replay = state;
    let mut eval_a = EpisodeEvaluator::new(task_a, &replay)?;
    let mut eval_b: Option<EpisodeEvaluator> = None;
    let mut a_after = false;
    let mut b_tick = None;
    let mut b_status = GoalStatus::Ongoing;
    for a in &traj.actions {
        if replay.tick == switch_tick {
            eval_b = Some(EpisodeEvaluator::new(task_b, &replay)?);
        }
        let obs = replay.advance(a).map_err(|e| EvalError::Other(e.to_string()))?;
        let before = eval_a.status();
        if eval_a.update(&replay, a, &obs) == GoalStatus::Success && before == GoalStatus::Ongoing && replay.tick > switch_tick {
            a_after = true;
        }
        if let Some(ev) = eval_b.as_mut() {
            if !b_status.is_terminal() {
                b_status = ev.update(&replay, a, &obs);
                if b_status == GoalStatus::Success {
                    b_tick = ev.decided_at();
                }
            }
        }
    }
    let status = if a_after {
        EpisodeStatus::Failure
    } else {
        match b_status {
            GoalStatus::Success => EpisodeStatus::Success,
            GoalStatus::DistractorFailure => EpisodeStatus::DistractorFailure,
            GoalStatus::Failure => EpisodeStatus::Failure,
            GoalStatus::Ongoing => EpisodeStatus::Timeout,
        }
    };
    Ok(SwitchOutcome {
        outcome: EpisodeOutcome {
            status,
            ticks_used: b_tick.unwrap_or(traj.len() as u64) as u32,
            trace_ref: None,
        },
        degenerate: false,
        a_completed_after_switch: a_after,
        b_success_tick: b_tick,
    })
}

/// A condition on a single action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionPredicate {
    KeyPressed { key: Key },
    KeyAbsent { key: Key },
    MouseDxNegative,
    MouseDxPositive,
    MouseDyNegative,
    MouseDyPositive,
    LeftClick,
    RightClick,
    All { of: Vec<ActionPredicate> },
    Any { of: Vec<ActionPredicate> },
}

impl ActionPredicate {
    pub fn holds(&self, a: &ActionEvent) -> bool {
        match self {
            ActionPredicate::KeyPressed { key } => a.keys.contains(*key),
            ActionPredicate::KeyAbsent { key } => !a.keys.contains(*key),
            ActionPredicate::MouseDxNegative => a.mouse_dx < 0,
            ActionPredicate::MouseDxPositive => a.mouse_dx > 0,
            ActionPredicate::MouseDyNegative => a.mouse_dy < 0,
            ActionPredicate::MouseDyPositive => a.mouse_dy > 0,
            ActionPredicate::LeftClick => a.left_button,
            ActionPredicate::RightClick => a.right_button,
            ActionPredicate::All { of } => of.iter().all(|p| p.holds(a)),
            ActionPredicate::Any { of } => of.iter().any(|p| p.holds(a)),
        }
    }
}

/// One forward pass with empty memory; passes iff the first argmax action satisfies
/// `predicate`. The guidance scale comes from the parameters' config.
pub fn static_probe(params: &Parameters, frame: &Frame, instruction: &str, predicate: &ActionPredicate) -> bool {
    let client = AgentClient::new(Arc::new(params.clone()), instruction, ActOptions::from_params(params));
    let state = encode_observation(params, frame);
    let first = client.logits(&state).argmax(0);
    predicate.holds(&first[0])
}

/// Mean per-step negative log-likelihood of the conditioned policy on `examples`
/// (unmasked steps only; the goal head is excluded).
pub fn logprob_eval(params: &Parameters, set: &TrainingSet, examples: &[&TrainingExample]) -> Result<f64, EvalError> {
    let mut total = 0.0;
    let mut steps = 0usize;
    let mut grad = vec![0.0; params.config.logit_count()];
    for ex in examples {
        let mem: Vec<Vec<f64>> = set
            .memory_frames(ex, params.config.memory_window)
            .into_iter()
            .map(|f| encode_observation(params, f))
            .collect();
        let refs: Vec<&[f64]> = mem.iter().map(Vec::as_slice).collect();
        let s = encode_observation(params, set.frame(ex));
        let u = encode_instruction(params, &ex.instruction);
        let head = head_forward(params, &s, &u, &refs);
        let (parts, _) = bc_loss_grad(&head.logits, head.goal_logit, &ex.actions, &ex.mask, &ex.goal_labels, 0.0, &mut grad);
        total += parts.action;
        steps += ex.valid_steps();
    }
    if steps == 0 {
        return Err(EvalError::EmptySplit);
    }
    Ok(total / steps as f64)
}
