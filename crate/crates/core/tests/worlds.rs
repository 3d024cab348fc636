use std::collections::BTreeSet;

use proptest::prelude::*;
use simkit::datapipe::expert_plan;
use simkit::evalharness::{run_episode, AgentRef, EpisodeEvaluator, EpisodeOptions};
use simkit::worldcore::*;
use simkit::worlds::*;

fn find(world: WorldId, suffix: &str) -> TaskSpec {
    registry_list(Some(world))
        .into_iter()
        .find(|t| t.task_id.ends_with(suffix))
        .unwrap_or_else(|| panic!("no {world} task ending in {suffix}"))
}

fn noop_run(state: &mut WorldState, n: u64) {
    for _ in 0..n {
        let t = state.tick;
        state.advance(&ActionEvent::noop(t)).unwrap();
    }
}

#[test]
fn noop_step_is_deterministic() {
    for world in WorldId::ALL {
        let task = &registry_list(Some(world))[0];
        let s0 = instantiate_task(task, 42).unwrap();
        let (a, oa) = step(&s0, &ActionEvent::noop(0)).unwrap();
        let (b, ob) = step(&s0, &ActionEvent::noop(0)).unwrap();
        assert_eq!(a.tick, 1);
        assert_eq!(save(&a), save(&b));
        assert_eq!(oa, ob);
        // Only critters may move on a no-op.
        let before = s0.observe().frame;
        let changed: Vec<usize> = (0..FRAME_CELLS).filter(|&i| before.cells()[i] != oa.frame.cells()[i]).collect();
        for i in changed {
            let cells = [before.cells()[i].symbol, oa.frame.cells()[i].symbol];
            assert!(cells.contains(&symbol::CRITTER), "{world}: cell {i} changed without animation");
        }
    }
}

#[test]
fn holding_forward_moves_at_most_one_cell_per_tick() {
    for world in WorldId::ALL {
        for seed in 0..5 {
            let mut s = instantiate_task(&registry_list(Some(world))[0], seed).unwrap();
            let start = s.content.scene().avatar.pos;
            for _ in 0..5 {
                let prev = s.content.scene().avatar.pos;
                let t = s.tick;
                s.advance(&ActionEvent::key(t, Key::W)).unwrap();
                assert!(prev.manhattan(s.content.scene().avatar.pos) <= 1);
            }
            assert!(start.manhattan(s.content.scene().avatar.pos) <= 5);
        }
    }
}

#[test]
fn wrong_tick_is_rejected() {
    let mut s = instantiate_task(&registry_list(None)[0], 0).unwrap();
    let before = s.save();
    assert!(matches!(s.advance(&ActionEvent::noop(3)), Err(StepError::TickMismatch { .. })));
    assert_eq!(s.save(), before);
    let mut bad = ActionEvent::noop(0);
    bad.mouse_dx = 9;
    assert!(s.advance(&bad).is_err());
}

#[test]
fn truncated_saves_fail_to_decode() {
    let s = instantiate_task(&find(WorldId::Harvest, "collect_wood"), 3).unwrap();
    let bytes = s.save();
    for n in 0..bytes.len() {
        assert!(load(&bytes[..n]).is_err(), "prefix of {n} bytes decoded");
    }
    assert!(load(&[]).is_err());
}

#[test]
fn rng_state_is_part_of_the_save() {
    let task = &registry_list(None)[0];
    let a = instantiate_task(task, 5).unwrap();
    let mut b = a.clone();
    b.rng.next_u64();
    assert_eq!(a.content, b.content);
    assert_ne!(save(&a), save(&b));
}

#[test]
fn lift_green_cube_has_target_and_other_colored_distractor() {
    let task = find(WorldId::PlayRoom, "lift_the_green_cube");
    let s = instantiate_task(&task, 7).unwrap();
    let scene = s.content.scene();
    let cube = scene.find_label("green_cube").unwrap();
    assert_eq!((cube.kind, cube.color), (ObjectKind::Cube, color::GREEN));
    assert!(cube.pos.is_some());
    assert!(!task.distractor_ids.is_empty());
    assert!(task.distractor_ids.iter().any(|d| scene.find_label(d).is_some_and(|o| o.color != color::GREEN)));
}

#[test]
fn instantiation_is_seeded() {
    let task = find(WorldId::PlayRoom, "lift_the_green_cube");
    assert_eq!(instantiate_task(&task, 9).unwrap().save(), instantiate_task(&task, 9).unwrap().save());
    let positions = |seed| -> Vec<Option<Pos>> {
        instantiate_task(&task, seed).unwrap().content.scene().objects.iter().map(|o| o.pos).collect()
    };
    assert_ne!(positions(1), positions(2));
}

#[test]
fn tasks_on_one_layout_share_initial_states() {
    let tasks = registry_list(None);
    for t in &tasks {
        let other = tasks.iter().find(|o| o.save_state_ref == t.save_state_ref && o.task_id != t.task_id).unwrap();
        assert_eq!(instantiate_task(t, 4).unwrap().save(), instantiate_task(other, 4).unwrap().save());
    }
}

/// Puts the avatar next to `target` facing it, without ticking.
fn stand_next_to(state: &mut WorldState, target: Pos) {
    let avatar = &mut state.content.scene_mut().avatar;
    avatar.pos = target.offset(Dir::South, 1);
    avatar.facing = Dir::North;
}

#[test]
fn axe_on_tree_yields_wood_and_conserves_resources() {
    let mut s = instantiate_task(&find(WorldId::Harvest, "collect_wood"), 0).unwrap();
    let tree = s.content.scene().objects.iter().find(|o| o.kind == ObjectKind::Tree).unwrap().clone();
    let pos = tree.pos.unwrap();
    stand_next_to(&mut s, pos);
    let WorldContent::Harvest(h) = &mut s.content else { panic!() };
    h.scene.avatar.hotbar = 2;
    let total = h.resource_total();
    let wood = h.count(Resource::Wood);
    let events = interact(&mut s, pos);
    let WorldContent::Harvest(h) = &s.content else { panic!() };
    assert_eq!(h.count(Resource::Wood), wood + 1);
    assert_eq!(h.resource_total(), total);
    assert_eq!(h.scene.object(tree.id).unwrap().quantity, tree.quantity - 1);
    assert_eq!(events.iter().map(|e| e.text.as_str()).collect::<Vec<_>>(), ["Wood +1"]);
}

#[test]
fn harvesting_conserves_resources_under_random_play() {
    let task = find(WorldId::Harvest, "collect_wood");
    for seed in 0..5 {
        let mut s = instantiate_task(&task, seed).unwrap();
        let WorldContent::Harvest(h) = &s.content else { panic!() };
        let total = h.resource_total();
        // Expert play for several harvesting tasks from the same state.
        for t in registry_list(Some(WorldId::Harvest)).iter().filter(|t| t.save_state_ref == task.save_state_ref) {
            if let Ok(plan) = expert_plan(t, &s) {
                for a in plan {
                    s.advance(&a).unwrap();
                }
            }
            let WorldContent::Harvest(h) = &s.content else { panic!() };
            assert_eq!(h.resource_total(), total, "after {}", t.task_id);
        }
    }
}

#[test]
fn knife_chops_carrot_on_board() {
    let task = find(WorldId::PlayRoom, "chop_the_carrot");
    let mut s = instantiate_task(&task, 0).unwrap();
    let scene = s.content.scene_mut();
    let knife = scene.objects.iter().find(|o| o.kind == ObjectKind::Knife).unwrap().id;
    let carrot = scene.objects.iter().find(|o| o.kind == ObjectKind::Carrot).unwrap().id;
    let board = (0..scene.height)
        .flat_map(|y| (0..scene.width).map(move |x| Pos::new(x, y)))
        .find(|&p| scene.tile(p) == Some(Tile::Board))
        .unwrap();
    scene.object_mut(knife).unwrap().pos = None;
    scene.avatar.held = Some(knife);
    scene.object_mut(carrot).unwrap().pos = Some(board);
    stand_next_to(&mut s, board);
    let events = interact(&mut s, board);
    let scene = s.content.scene();
    assert!(scene.object(carrot).unwrap().chopped);
    assert_eq!(object_symbol(scene.object(carrot).unwrap(), 1), symbol::CHOPPED_CARROT);
    assert_eq!(events[0].text, "Carrot chopped");
}

#[test]
fn interacting_with_empty_floor_changes_nothing_but_the_tick() {
    for world in WorldId::ALL {
        let mut s = instantiate_task(&registry_list(Some(world))[0], 1).unwrap();
        let scene = s.content.scene();
        let target = [Dir::North, Dir::East, Dir::South, Dir::West]
            .iter()
            .map(|&d| scene.avatar.pos.offset(d, 1))
            .find(|&p| scene.free_floor(p))
            .unwrap();
        let before = s.clone();
        let events = interact(&mut s, target);
        assert!(events.is_empty());
        assert_eq!(s.save(), before.save());
        let t = s.tick;
        let mut a = ActionEvent::noop(t);
        a.left_button = true;
        s.advance(&a).unwrap();
        assert_eq!(s.tick, before.tick + 1);
    }
}

#[test]
fn lifting_a_distractor_first_is_an_immediate_failure() {
    let task = find(WorldId::PlayRoom, "lift_the_green_cube");
    let mut s = instantiate_task(&task, 0).unwrap();
    let mut ev = EpisodeEvaluator::new(&task, &s).unwrap();
    let blue = s.content.scene().find_label(&task.distractor_ids[0]).unwrap().id;
    let green = s.content.scene().find_label("green_cube").unwrap().id;
    let obs = s.advance(&ActionEvent::noop(0)).unwrap();
    assert_eq!(ev.update(&s, &ActionEvent::noop(0), &obs), GoalStatus::Ongoing);
    let scene = s.content.scene_mut();
    scene.object_mut(blue).unwrap().pos = None;
    scene.avatar.held = Some(blue);
    scene.record(1, Verb::PickUp, Some(blue), None);
    let obs = s.advance(&ActionEvent::noop(1)).unwrap();
    assert_eq!(ev.update(&s, &ActionEvent::noop(1), &obs), GoalStatus::DistractorFailure);
    // Later holding the target does not undo it.
    let scene = s.content.scene_mut();
    scene.avatar.held = Some(green);
    scene.object_mut(green).unwrap().pos = None;
    let obs = s.advance(&ActionEvent::noop(2)).unwrap();
    assert_eq!(ev.update(&s, &ActionEvent::noop(2), &obs), GoalStatus::DistractorFailure);
    assert_eq!(ev.decided_at(), Some(2));
}

#[test]
fn success_reports_the_tick_it_happened() {
    let task = find(WorldId::PlayRoom, "/jump");
    assert_eq!(task.budget_ticks, 100);
    let mut plan: Vec<ActionEvent> = (0..29).map(ActionEvent::noop).collect();
    plan.push(ActionEvent::key(29, Key::Space));
    let r = run_episode(&AgentRef::Scripted(plan), &task, 0, &EpisodeOptions::default()).unwrap();
    assert_eq!(r.outcome.status, EpisodeStatus::Success);
    assert_eq!(r.outcome.ticks_used, 30);
}

#[test]
fn move_forward_succeeds_at_three_cells_of_displacement() {
    let task = find(WorldId::PlayRoom, "move_forward");
    for seed in 0..5 {
        let mut s = instantiate_task(&task, seed).unwrap();
        let mut ev = EpisodeEvaluator::new(&task, &s).unwrap();
        let start = s.content.scene().avatar.pos;
        let (dx, dy) = s.content.scene().avatar.facing.delta();
        let plan = expert_plan(&task, &s).unwrap();
        let mut first_three = None;
        for a in &plan {
            let obs = s.advance(a).unwrap();
            let status = ev.update(&s, a, &obs);
            let p = s.content.scene().avatar.pos;
            let along = (p.x - start.x) * dx + (p.y - start.y) * dy;
            if along >= 3 && first_three.is_none() {
                first_three = Some(s.tick);
            }
            assert_eq!(status == GoalStatus::Success, first_three.is_some(), "seed {seed} tick {}", s.tick);
        }
        assert_eq!(ev.decided_at(), first_three);
    }
}

#[test]
fn registry_covers_movement_objects_and_every_category() {
    let playroom = registry_list(Some(WorldId::PlayRoom));
    let instr: BTreeSet<&str> = playroom.iter().map(|t| t.instruction.as_str()).collect();
    for i in ["turn left", "lift the green cube", "move forward", "look up", "jump"] {
        assert!(instr.contains(i), "missing {i}");
    }
    let all = registry_list(None);
    let cats: BTreeSet<SkillCategory> = all.iter().map(|t| t.skill_category).collect();
    assert_eq!(cats.len(), 9);
    let ids: BTreeSet<&str> = all.iter().map(|t| t.task_id.as_str()).collect();
    assert_eq!(ids.len(), all.len());
    for t in &all {
        t.validate().unwrap();
        for seed in 0..5 {
            instantiate_task(t, seed).unwrap();
        }
    }
}

#[test]
fn registry_toml_round_trip() {
    let all = registry_list(None);
    let text = registry_to_toml(&all);
    assert_eq!(registry_from_toml(&text).unwrap(), all);
    assert!(registry_from_toml("version = 99\n").is_err());
}

fn action_strategy() -> impl Strategy<Value = (u16, i8, i8, bool, bool)> {
    (any::<u16>(), -3i8..=3, -3i8..=3, any::<bool>(), any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_load_round_trips_after_random_play(
        task_ix in 0usize..120,
        seed in 0u64..50,
        actions in prop::collection::vec(action_strategy(), 0..60),
    ) {
        let tasks = registry_list(None);
        let mut s = instantiate_task(&tasks[task_ix % tasks.len()], seed).unwrap();
        for (keys, dx, dy, l, r) in actions {
            let a = ActionEvent { tick: s.tick, keys: KeySet::from_bits(keys), mouse_dx: dx, mouse_dy: dy, left_button: l, right_button: r };
            s.advance(&a).unwrap();
        }
        let bytes = save(&s);
        let back = load(&bytes).unwrap();
        prop_assert_eq!(save(&back), bytes);
        prop_assert_eq!(back.frame_hash(), s.frame_hash());
        noop_run(&mut s.clone(), 3);
    }

    #[test]
    fn random_bytes_never_panic_the_loader(bytes in prop::collection::vec(any::<u8>(), 0..700)) {
        let _ = load(&bytes);
    }
}
