//! Session core plus two clock drivers: a deterministic discrete-event simulation and a
//! wall-clock driver with a client thread.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::message::{ActionChunk, EndReason, Message, Role, SessionConfig};
use super::schedule::{ActionBuffer, Executed, ScheduleStats};
use super::trajectory::{InstructionSegment, SegmentSource, Trajectory, TrajectoryHeader};
use crate::evalharness::EpisodeEvaluator;
use crate::worldcore::{EpisodeStatus, Observation, StepError, WorldState};
use crate::worlds::GoalStatus;

/// The agent or human side of a session.
pub trait SessionClient {
    /// Called for each delivered observation; may answer with an offset-stamped chunk.
    fn on_observation(&mut self, obs: &Observation) -> Option<ActionChunk>;
    /// Instruction and Interrupt messages.
    fn on_control(&mut self, _msg: &Message) {}
    /// Simulated compute time of the last `on_observation`, in ms.
    fn compute_ms(&self) -> f64 {
        0.0
    }
}

/// A client that never acts.
#[derive(Debug, Default, Clone, Copy)]
pub struct SilentClient;

impl SessionClient for SilentClient {
    fn on_observation(&mut self, _obs: &Observation) -> Option<ActionChunk> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub status: EpisodeStatus,
    pub ticks_used: u32,
    pub trajectory: Option<Trajectory>,
    pub stats: ScheduleStats,
    pub executed: Vec<Executed>,
    pub end_reason: EndReason,
    pub overruns: u64,
}

/// World, action buffer, recorder and evaluator for one episode.
pub struct SessionCore {
    pub state: WorldState,
    pub config: SessionConfig,
    pub buffer: ActionBuffer,
    pub evaluator: Option<EpisodeEvaluator>,
    pub budget: u64,
    trajectory: Option<Trajectory>,
    instruction: Option<(u64, String, SegmentSource)>,
    executed: Vec<Executed>,
    end: Option<EndReason>,
}

impl SessionCore {
    pub fn new(
        state: WorldState,
        config: SessionConfig,
        seed: u64,
        task_id: Option<String>,
        role: Role,
        budget: u64,
    ) -> SessionCore {
        let trajectory = config.record.then(|| {
            let header = TrajectoryHeader {
                world_id: state.world_id,
                seed,
                task_id,
                role,
                config,
                initial_state: state.save(),
            };
            Trajectory::new(header, state.observe())
        });
        SessionCore {
            state,
            config,
            buffer: ActionBuffer::new(),
            evaluator: None,
            budget,
            trajectory,
            instruction: None,
            executed: Vec::new(),
            end: None,
        }
    }

    pub fn with_evaluator(mut self, evaluator: EpisodeEvaluator) -> Self {
        self.evaluator = Some(evaluator);
        self
    }

    /// Starts a new instruction segment at the current tick, closing the previous one.
    pub fn set_instruction(&mut self, text: &str, source: SegmentSource) {
        self.close_segment();
        self.instruction = Some((self.state.tick, text.to_string(), source));
    }

    fn close_segment(&mut self) {
        if let (Some((t0, text, source)), Some(traj)) = (self.instruction.take(), self.trajectory.as_mut()) {
            if self.state.tick > t0 {
                traj.segments.push(InstructionSegment {
                    t0,
                    t1: self.state.tick,
                    text,
                    source,
                });
            }
        }
    }

    pub fn status(&self) -> GoalStatus {
        self.evaluator.as_ref().map_or(GoalStatus::Ongoing, |e| e.status())
    }

    pub fn done(&self) -> bool {
        self.end.is_some() || self.state.tick >= self.budget || self.status().is_terminal()
    }

    pub fn end(&mut self, reason: EndReason) {
        self.end.get_or_insert(reason);
    }

    /// Executes one tick from the action buffer.
    pub fn step(&mut self) -> Result<Observation, StepError> {
        let (action, how) = self.buffer.take(self.state.tick);
        let obs = self.state.advance(&action)?;
        if let Some(ev) = self.evaluator.as_mut() {
            ev.update(&self.state, &action, &obs);
        }
        if let Some(t) = self.trajectory.as_mut() {
            t.push(action, obs.clone());
        }
        self.executed.push(how);
        Ok(obs)
    }

    pub fn finish(mut self, overruns: u64) -> SessionOutcome {
        self.close_segment();
        if let Some(t) = self.trajectory.as_mut() {
            t.seal();
        }
        let status = match self.status() {
            GoalStatus::Success => EpisodeStatus::Success,
            GoalStatus::Failure => EpisodeStatus::Failure,
            GoalStatus::DistractorFailure => EpisodeStatus::DistractorFailure,
            GoalStatus::Ongoing => EpisodeStatus::Timeout,
        };
        let ticks_used = self
            .evaluator
            .as_ref()
            .and_then(|e| e.decided_at())
            .unwrap_or(self.state.tick) as u32;
        let end_reason = self.end.unwrap_or(match status {
            EpisodeStatus::Success => EndReason::Success,
            EpisodeStatus::Failure => EndReason::Failure,
            EpisodeStatus::DistractorFailure => EndReason::DistractorFailure,
            EpisodeStatus::Timeout => EndReason::Timeout,
        });
        SessionOutcome {
            status,
            ticks_used,
            trajectory: self.trajectory,
            stats: self.buffer.stats.clone(),
            executed: self.executed,
            end_reason,
            overruns,
        }
    }
}

/// Extra inputs for a simulated run.
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Seed for latency jitter.
    pub seed: u64,
    /// Instruction changes `(tick, text)`, sent as Interrupt.
    pub interrupts: Vec<(u64, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum SimEvent {
    Control(usize),
    ChunkArrive(usize),
    ClientFree,
    ObsArrive(usize),
}

/// Runs a session on a virtual clock. Tick `i` executes at `(i + 1) · tick`; the
/// observation of tick `i` is emitted at `i · tick`. Arrivals at exactly a tick's time
/// are applied before that tick. The client handles one observation at a time and,
/// when free, takes the newest one waiting.
pub fn run_simulated(
    mut core: SessionCore,
    client: &mut dyn SessionClient,
    opts: &SimOptions,
) -> Result<SessionOutcome, StepError> {
    let tick_us = (1e6 / f64::from(core.config.tick_hz)).round() as u64;
    let lat = core.config.latency;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut jitter = move || {
        if lat.jitter_ms == 0 {
            0
        } else {
            rng.gen_range(0..=u64::from(lat.jitter_ms) * 1000)
        }
    };
    let obs_us = u64::from(lat.obs_delay_ms) * 1000;
    let act_us = u64::from(lat.action_delay_ms) * 1000;

    let mut heap: BinaryHeap<Reverse<(u64, u64, SimEvent)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<_>, t: u64, e: SimEvent| {
        seq += 1;
        heap.push(Reverse((t, seq, e)));
    };
    let mut observations: Vec<Observation> = vec![core.state.observe()];
    let mut chunks: Vec<ActionChunk> = Vec::new();
    let mut controls: Vec<Message> = Vec::new();
    let mut busy_until = 0u64;
    let mut waiting: Option<usize> = None;
    let mut latest_seen: Option<usize> = None;

    if let Some((_, text, _)) = core.instruction.clone() {
        controls.push(Message::Instruction { tick: 0, text });
        push(&mut heap, 0, SimEvent::Control(0));
    }
    push(&mut heap, obs_us + jitter(), SimEvent::ObsArrive(0));

    let mut i = 0u64;
    while !core.done() {
        let now = (i + 1) * tick_us;
        while let Some(Reverse((t, _, _))) = heap.peek() {
            if *t > now {
                break;
            }
            let Reverse((t, _, ev)) = heap.pop().expect("peeked");
            match ev {
                SimEvent::Control(idx) => client.on_control(&controls[idx]),
                SimEvent::ChunkArrive(idx) => core.buffer.insert(&chunks[idx], core.state.tick),
                SimEvent::ObsArrive(_) | SimEvent::ClientFree => {
                    let idx = match ev {
                        SimEvent::ObsArrive(idx) => {
                            if latest_seen.is_some_and(|l| idx < l) {
                                continue;
                            }
                            if busy_until > t {
                                waiting = Some(idx);
                                continue;
                            }
                            idx
                        }
                        _ => match waiting.take() {
                            Some(idx) => idx,
                            None => continue,
                        },
                    };
                    latest_seen = Some(idx);
                    let chunk = client.on_observation(&observations[idx]);
                    let compute = (client.compute_ms() * 1000.0).round().max(0.0) as u64;
                    busy_until = t + compute;
                    if compute > 0 {
                        push(&mut heap, busy_until, SimEvent::ClientFree);
                    }
                    if let Some(c) = chunk {
                        chunks.push(c);
                        push(&mut heap, busy_until + act_us + jitter(), SimEvent::ChunkArrive(chunks.len() - 1));
                    }
                }
            }
        }
        if let Some((_, text)) = opts.interrupts.iter().find(|(t, _)| *t == i) {
            core.set_instruction(text, SegmentSource::Live);
            controls.push(Message::Interrupt { tick: i, text: text.clone() });
            push(&mut heap, now.saturating_sub(tick_us) + obs_us, SimEvent::Control(controls.len() - 1));
        }
        let obs = core.step()?;
        i += 1;
        observations.push(obs);
        push(&mut heap, now + obs_us + jitter(), SimEvent::ObsArrive(observations.len() - 1));
    }
    Ok(core.finish(0))
}

/// Runs a session against the wall clock. The client runs on its own thread; injected
/// delays are applied by holding messages until they are due.
pub fn run_realtime<C: SessionClient + Send + 'static>(
    mut core: SessionCore,
    client: C,
    seed: u64,
) -> Result<SessionOutcome, StepError> {
    let tick = Duration::from_secs_f64(1.0 / f64::from(core.config.tick_hz));
    let lat = core.config.latency;
    let (obs_tx, obs_rx) = mpsc::channel::<(Instant, Message)>();
    let (act_tx, act_rx) = mpsc::channel::<(Instant, ActionChunk)>();
    let act_delay = Duration::from_millis(u64::from(lat.action_delay_ms));
    let client_thread = std::thread::spawn(move || {
        let mut client = client;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inbox: VecDeque<(Instant, Message)> = VecDeque::new();
        loop {
            if inbox.is_empty() {
                match obs_rx.recv() {
                    Ok(m) => inbox.push_back(m),
                    Err(_) => break,
                }
            }
            while let Ok(m) = obs_rx.try_recv() {
                inbox.push_back(m);
            }
            let due = inbox.front().expect("non-empty").0;
            std::thread::sleep(due.saturating_duration_since(Instant::now()));
            // Controls in order; only the newest due observation is acted on.
            let now = Instant::now();
            let mut newest = None;
            while inbox.front().is_some_and(|(d, _)| *d <= now) {
                match inbox.pop_front().expect("non-empty").1 {
                    Message::Observation(o) => newest = Some(o),
                    other => client.on_control(&other),
                }
            }
            if let Some(o) = newest {
                if let Some(chunk) = client.on_observation(&o) {
                    let j = if lat.jitter_ms == 0 {
                        0
                    } else {
                        rng.gen_range(0..=u64::from(lat.jitter_ms))
                    };
                    let due = Instant::now() + act_delay + Duration::from_millis(j);
                    if act_tx.send((due, chunk)).is_err() {
                        break;
                    }
                }
            }
        }
    });

    let obs_delay = Duration::from_millis(u64::from(lat.obs_delay_ms));
    let start = Instant::now();
    let mut queued: VecDeque<(Instant, ActionChunk)> = VecDeque::new();
    let mut overruns = 0u64;
    if let Some((_, text, _)) = core.instruction.clone() {
        let _ = obs_tx.send((start + obs_delay, Message::Instruction { tick: 0, text }));
    }
    let _ = obs_tx.send((start + obs_delay, Message::Observation(core.state.observe())));
    let mut i = 0u64;
    while !core.done() {
        let deadline = start + tick * (i as u32 + 1);
        std::thread::sleep(deadline.saturating_duration_since(Instant::now()));
        while let Ok(item) = act_rx.try_recv() {
            queued.push_back(item);
        }
        let now = Instant::now();
        let (ready, later): (Vec<_>, Vec<_>) = queued.drain(..).partition(|(due, _)| *due <= now);
        queued.extend(later);
        for (_, c) in ready {
            core.buffer.insert(&c, core.state.tick);
        }
        let obs = core.step()?;
        i += 1;
        if Instant::now() > start + tick * (i as u32 + 1) {
            overruns += 1;
            log::warn!("tick {} overran its period", i - 1);
        }
        if obs_tx.send((Instant::now() + obs_delay, Message::Observation(obs))).is_err() {
            core.end(EndReason::Disconnect);
        }
    }
    drop(obs_tx);
    let _ = client_thread.join();
    Ok(core.finish(overruns))
}
