//! Scripted demonstrators: a reactive planner over (cell, facing) that solves every
//! registry task from the world state.

use std::collections::VecDeque;

use thiserror::Error;

use crate::evalharness::{EpisodeEvaluator, EvaluatorSpec};
use crate::netproto::{Role, SegmentSource, SessionConfig, Trajectory, TrajectoryHeader, InstructionSegment};
use crate::worldcore::{instantiate_task, ActionEvent, EpisodeStatus, Key, KeySet, TaskError, TaskSpec, WorldState};
use crate::worlds::{Dir, GoalStatus, Menu, ObjectKind, Pos, Predicate, Resource, Scene, Tile, WorldContent, MOVE_CELLS, REACH};

/// Idle ticks before the first move, so an observation lines up with the action
/// `offset_k` ticks later during training.
pub const EXPERT_LEAD_IN: u64 = 2;
/// No-op ticks recorded after success so goal-completion labels have positives.
pub const EXPERT_TAIL: u64 = 4;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("expert failed task {task} seed {seed}: {status:?} after {ticks} ticks")]
    Unsolved {
        task: String,
        seed: u64,
        status: EpisodeStatus,
        ticks: u64,
    },
}

/// What the expert is trying to bring about, derived from the task.
#[derive(Debug, Clone, PartialEq)]
enum Plan {
    Press(Key),
    Mouse(i8, i8),
    Walk { backward: bool },
    Approach(String),
    Fetch(String),
    ChopWith { knife: String, carrot: String },
    Stack { child: String, parent: String },
    Unstack(String),
    Drop(String),
    Gather(Resource),
    Craft { gather_first: bool },
    Scan,
    Idle,
}

fn plan_for(task: &TaskSpec) -> Plan {
    let ents = task.evaluator_spec.entity_refs();
    let e = |i: usize| ents.get(i).cloned().unwrap_or_default();
    match &task.evaluator_spec {
        EvaluatorSpec::GroundTruth { predicate, resource, .. } => match predicate {
            Predicate::MoveForward => Plan::Walk { backward: false },
            Predicate::MoveBackward => Plan::Walk { backward: true },
            Predicate::TurnedLeft => Plan::Mouse(-3, 0),
            Predicate::TurnedRight => Plan::Mouse(3, 0),
            Predicate::LookUp => Plan::Mouse(0, -3),
            Predicate::LookDown => Plan::Mouse(0, 3),
            Predicate::Jumped => Plan::Press(Key::Space),
            Predicate::InventoryOpen => Plan::Press(Key::E),
            Predicate::MenuOpen => Plan::Press(Key::Esc),
            Predicate::Holding => Plan::Fetch(e(0)),
            Predicate::NextTo => Plan::Approach(e(0)),
            Predicate::Chopped => Plan::ChopWith {
                knife: "knife".into(),
                carrot: e(0),
            },
            Predicate::Dropped => Plan::Drop(e(0)),
            Predicate::StackedOn => Plan::Stack {
                child: e(0),
                parent: e(1),
            },
            Predicate::Unstacked => Plan::Unstack(e(0)),
            Predicate::Gathered => resource.map_or(Plan::Idle, Plan::Gather),
        },
        EvaluatorSpec::OcrPattern { patterns, action } => {
            if let Some(req) = action {
                return Plan::Press(req.key);
            }
            let joined = patterns.join(" ");
            if joined.contains("Plank") {
                Plan::Craft {
                    gather_first: joined.contains("Wood"),
                }
            } else if joined.contains("Visor") {
                Plan::Scan
            } else {
                Resource::ALL
                    .into_iter()
                    .find(|r| joined.contains(r.name()))
                    .map_or(Plan::Idle, Plan::Gather)
            }
        }
        EvaluatorSpec::Judged { .. } => Plan::Idle,
    }
}

/// Movement primitives the planner searches over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Forward,
    TurnLeft,
    TurnRight,
    StrafeLeft,
    StrafeRight,
    Back,
}

const MOVES: [Move; 6] = [
    Move::Forward,
    Move::TurnLeft,
    Move::TurnRight,
    Move::StrafeLeft,
    Move::StrafeRight,
    Move::Back,
];

impl Move {
    fn apply(self, scene: &Scene, p: Pos, d: Dir) -> Option<(Pos, Dir)> {
        let step = |dir: Dir| {
            let q = p.offset(dir, 1);
            (scene.walkable(q) || q == scene.avatar.pos).then_some((q, d))
        };
        match self {
            Move::Forward => step(d),
            Move::Back => step(d.back()),
            Move::StrafeLeft => step(d.left()),
            Move::StrafeRight => step(d.right()),
            Move::TurnLeft => Some((p, d.left())),
            Move::TurnRight => Some((p, d.right())),
        }
    }

    fn action(self, tick: u64) -> ActionEvent {
        let mut a = ActionEvent::noop(tick);
        match self {
            Move::Forward => a.keys = KeySet::EMPTY.with(Key::W),
            Move::Back => a.keys = KeySet::EMPTY.with(Key::S),
            Move::StrafeLeft => a.keys = KeySet::EMPTY.with(Key::A),
            Move::StrafeRight => a.keys = KeySet::EMPTY.with(Key::D),
            Move::TurnLeft => a.mouse_dx = -3,
            Move::TurnRight => a.mouse_dx = 3,
        }
        a
    }
}

fn state_index(scene: &Scene, p: Pos, d: Dir) -> usize {
    ((p.y * scene.width + p.x) as usize) * 4 + d as usize
}

/// First move on a shortest path to any pose satisfying `goal`, preferring
/// forward, then turns, then strafes, then backing up. `None` if unreachable or already there.
fn plan_move(scene: &Scene, goal: impl Fn(Pos, Dir) -> bool, prefer_back: bool) -> Option<Move> {
    let n = (scene.width * scene.height) as usize * 4;
    let mut poses = Vec::new();
    for y in 0..scene.height {
        for x in 0..scene.width {
            let p = Pos::new(x, y);
            if scene.walkable(p) || p == scene.avatar.pos {
                for d in Dir::ALL {
                    poses.push((p, d));
                }
            }
        }
    }
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(p, d) in &poses {
        for m in MOVES {
            if let Some((q, e)) = m.apply(scene, p, d) {
                preds[state_index(scene, q, e)].push(state_index(scene, p, d));
            }
        }
    }
    let mut dist = vec![u32::MAX; n];
    let mut queue = VecDeque::new();
    for &(p, d) in &poses {
        if goal(p, d) {
            let i = state_index(scene, p, d);
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &j in &preds[i] {
            if dist[j] == u32::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    let a = &scene.avatar;
    let here = dist[state_index(scene, a.pos, a.facing)];
    if here == 0 || here == u32::MAX {
        return None;
    }
    let order: Vec<Move> = if prefer_back {
        vec![Move::Back, Move::StrafeLeft, Move::StrafeRight, Move::Forward, Move::TurnLeft, Move::TurnRight]
    } else {
        MOVES.to_vec()
    };
    order.into_iter().find(|m| {
        m.apply(scene, a.pos, a.facing)
            .is_some_and(|(q, e)| dist[state_index(scene, q, e)] == here - 1)
    })
}

/// Whether standing at `p` facing `d` puts `target` as the click target.
fn clicks(scene: &Scene, p: Pos, d: Dir, target: Pos) -> bool {
    for n in 1..=REACH {
        let q = p.offset(d, n);
        if q == target {
            return true;
        }
        if scene.tile(q) != Some(Tile::Floor) || scene.occupied(q) {
            return false;
        }
    }
    false
}

fn click_action(tick: u64, right: bool) -> ActionEvent {
    let mut a = ActionEvent::noop(tick);
    if right {
        a.right_button = true;
    } else {
        a.left_button = true;
    }
    a
}

/// Walk to and left-click `target`.
fn approach_and_click(scene: &Scene, target: Pos, tick: u64) -> ActionEvent {
    if scene.target_cell() == Some(target) {
        return click_action(tick, false);
    }
    match plan_move(scene, |p, d| clicks(scene, p, d, target), false) {
        Some(m) => m.action(tick),
        None => ActionEvent::noop(tick),
    }
}

fn label_pos(scene: &Scene, label: &str) -> Option<Pos> {
    scene.find_label(label).and_then(|o| o.pos)
}

fn press(key: Key, tick: u64) -> ActionEvent {
    ActionEvent::key(tick, key)
}

fn hotbar_key(slot: u8) -> Key {
    [Key::Num1, Key::Num2, Key::Num3, Key::Num4][usize::from(slot.clamp(1, 4) - 1)]
}

fn expert_action(plan: &Plan, state: &WorldState) -> ActionEvent {
    let tick = state.tick;
    let scene = state.content.scene();
    let a = &scene.avatar;
    let noop = ActionEvent::noop(tick);
    if a.menu != Menu::Closed && !matches!(plan, Plan::Press(Key::E) | Plan::Press(Key::Esc)) {
        let key = if a.menu == Menu::Pause { Key::Esc } else { Key::E };
        return if a.prev_keys.contains(key) { noop } else { press(key, tick) };
    }
    let held_label = a.held.and_then(|h| scene.object(h)).map(|o| o.label.as_str());
    match plan {
        Plan::Idle => noop,
        Plan::Press(k) => press(*k, tick),
        Plan::Mouse(dx, dy) => {
            let mut e = noop;
            e.mouse_dx = *dx;
            e.mouse_dy = *dy;
            e
        }
        Plan::Walk { backward } => {
            let (fx, fy) = a.start_facing.delta();
            let start = a.start_pos;
            let goal = |p: Pos, _d: Dir| {
                let along = (p.x - start.x) * fx + (p.y - start.y) * fy;
                if *backward {
                    along <= -MOVE_CELLS
                } else {
                    along >= MOVE_CELLS
                }
            };
            plan_move(scene, goal, *backward).map_or(noop, |m| m.action(tick))
        }
        Plan::Approach(label) => {
            let Some(t) = label_pos(scene, label) else { return noop };
            plan_move(scene, |p, _| p.manhattan(t) == 1, false).map_or(noop, |m| m.action(tick))
        }
        Plan::Fetch(label) => match label_pos(scene, label) {
            Some(t) if a.held.is_none() => approach_and_click(scene, t, tick),
            _ => noop,
        },
        Plan::ChopWith { knife, carrot } => {
            if held_label == Some(knife.as_str()) {
                label_pos(scene, carrot).map_or(noop, |t| approach_and_click(scene, t, tick))
            } else if a.held.is_none() {
                label_pos(scene, knife).map_or(noop, |t| approach_and_click(scene, t, tick))
            } else {
                noop
            }
        }
        Plan::Stack { child, parent } => {
            if held_label == Some(child.as_str()) {
                label_pos(scene, parent).map_or(noop, |t| approach_and_click(scene, t, tick))
            } else if a.held.is_none() {
                label_pos(scene, child).map_or(noop, |t| approach_and_click(scene, t, tick))
            } else {
                noop
            }
        }
        Plan::Unstack(label) => label_pos(scene, label).map_or(noop, |t| approach_and_click(scene, t, tick)),
        Plan::Drop(label) => {
            if held_label != Some(label.as_str()) {
                return noop;
            }
            if scene.free_floor(a.pos.offset(a.facing, 1)) {
                return press(Key::Q, tick);
            }
            let m = plan_move(scene, |p, d| scene.free_floor(p.offset(d, 1)) || {
                let q = p.offset(d, 1);
                q == scene.avatar.pos
            }, false);
            m.map_or(noop, |m| m.action(tick))
        }
        Plan::Gather(res) => {
            let Some((kind, slot, _)) = res.source() else { return noop };
            if a.hotbar != slot {
                return press(hotbar_key(slot), tick);
            }
            nearest_node(scene, kind).map_or(noop, |t| approach_and_click(scene, t, tick))
        }
        Plan::Craft { gather_first } => {
            let WorldContent::Harvest(h) = &state.content else { return noop };
            if *gather_first && h.count(Resource::Wood) <= h.start_inventory[Resource::Wood as usize] {
                return expert_action(&Plan::Gather(Resource::Wood), state);
            }
            let bench = (0..scene.height)
                .flat_map(|y| (0..scene.width).map(move |x| Pos::new(x, y)))
                .find(|&p| scene.tile(p) == Some(Tile::Bench));
            bench.map_or(noop, |t| approach_and_click(scene, t, tick))
        }
        Plan::Scan => {
            if a.hotbar != 4 {
                press(Key::Num4, tick)
            } else {
                click_action(tick, true)
            }
        }
    }
}

fn nearest_node(scene: &Scene, kind: ObjectKind) -> Option<Pos> {
    scene
        .objects
        .iter()
        .filter(|o| o.kind == kind && o.quantity > 0)
        .filter_map(|o| o.pos)
        .min_by_key(|p| p.manhattan(scene.avatar.pos))
}

/// The expert's next action from `state` for `task`; no-ops during the lead-in.
pub fn expert_step(task: &TaskSpec, state: &WorldState, start_tick: u64) -> ActionEvent {
    if state.tick < start_tick + EXPERT_LEAD_IN {
        return ActionEvent::noop(state.tick);
    }
    expert_action(&plan_for(task), state)
}

#[derive(Debug, Clone)]
pub struct ExpertRun {
    pub trajectory: Trajectory,
    pub status: EpisodeStatus,
    /// Tick of the state in which the goal first held.
    pub success_tick: Option<u64>,
}

/// Runs the scripted expert on `task` from its seed-`seed` initial state.
pub fn scripted_expert(task: &TaskSpec, seed: u64) -> Result<ExpertRun, ExpertError> {
    let mut state = instantiate_task(task, seed)?;
    let mut evaluator = EpisodeEvaluator::new(task, &state)?;
    let header = TrajectoryHeader {
        world_id: state.world_id,
        seed,
        task_id: Some(task.task_id.clone()),
        role: Role::Player,
        config: SessionConfig::default(),
        initial_state: state.save(),
    };
    let mut traj = Trajectory::new(header, state.observe());
    let budget = u64::from(task.budget_ticks);
    let mut status = GoalStatus::Ongoing;
    while state.tick < budget && !status.is_terminal() {
        let action = expert_step(task, &state, 0);
        let obs = state.advance(&action).expect("expert actions are valid");
        status = evaluator.update(&state, &action, &obs);
        traj.push(action, obs);
    }
    let success_tick = (status == GoalStatus::Success).then(|| state.tick);
    if success_tick.is_some() {
        for _ in 0..EXPERT_TAIL {
            let action = ActionEvent::noop(state.tick);
            let obs = state.advance(&action).expect("noop is valid");
            traj.push(action, obs);
        }
    }
    traj.seal();
    traj.segments.push(InstructionSegment {
        t0: 0,
        t1: traj.len() as u64,
        text: task.instruction.clone(),
        source: SegmentSource::Scripted,
    });
    let status = match status {
        GoalStatus::Success => EpisodeStatus::Success,
        GoalStatus::Failure => EpisodeStatus::Failure,
        GoalStatus::DistractorFailure => EpisodeStatus::DistractorFailure,
        GoalStatus::Ongoing => EpisodeStatus::Timeout,
    };
    Ok(ExpertRun {
        trajectory: traj,
        status,
        success_tick,
    })
}

/// Like [`scripted_expert`] but an unsolved task is an error.
pub fn solve(task: &TaskSpec, seed: u64) -> Result<ExpertRun, ExpertError> {
    let run = scripted_expert(task, seed)?;
    if run.status != EpisodeStatus::Success {
        return Err(ExpertError::Unsolved {
            task: task.task_id.clone(),
            seed,
            status: run.status,
            ticks: run.trajectory.len() as u64,
        });
    }
    Ok(run)
}

/// The expert's actions for `task` starting from `state` (lead-in included), up to and
/// including the tick that completes the task. Ticks are stamped from `state.tick`.
pub fn expert_plan(task: &TaskSpec, state: &WorldState) -> Result<Vec<ActionEvent>, ExpertError> {
    let mut state = state.clone();
    let start = state.tick;
    let mut evaluator = EpisodeEvaluator::new(task, &state)?;
    let mut plan = Vec::new();
    let mut status = GoalStatus::Ongoing;
    while state.tick < start + u64::from(task.budget_ticks) && !status.is_terminal() {
        let action = expert_step(task, &state, start);
        let obs = state.advance(&action).expect("expert actions are valid");
        status = evaluator.update(&state, &action, &obs);
        plan.push(action);
    }
    if status != GoalStatus::Success {
        return Err(ExpertError::Unsolved {
            task: task.task_id.clone(),
            seed: 0,
            status: EpisodeStatus::Timeout,
            ticks: plan.len() as u64,
        });
    }
    Ok(plan)
}
