use std::sync::Arc;

use simkit::agent::*;
use simkit::datapipe::{collect, load_dataset, FilterRules};
use simkit::evalharness::{run_episode, AgentRef, EpisodeOptions};
use simkit::netproto::{run_simulated, Message, SessionClient, SessionConfig, SessionCore, SimOptions, Role, Executed};
use simkit::worldcore::*;
use simkit::worlds::registry_list;

fn params(config: &AgentConfig, seed: u64) -> Parameters {
    Parameters::init(config, seed)
}

/// Initial parameters with a non-zero output layer, so logits depend on the input.
fn perturbed(config: &AgentConfig, seed: u64) -> Parameters {
    let mut p = Parameters::init(config, seed);
    for name in ["out_w", "goal_w"] {
        for (i, x) in p.tensor_mut(name).unwrap().iter_mut().enumerate() {
            *x = ((i * 37 % 101) as f64 - 50.0) / 500.0;
        }
    }
    p
}

fn small() -> AgentConfig {
    AgentConfig {
        memory_window: 4,
        steps: 200,
        ..AgentConfig::default()
    }
}

fn training_set(dir: &std::path::Path) -> TrainingSet {
    let tasks: Vec<TaskSpec> = registry_list(None).into_iter().filter(|t| t.task_id.contains("/glade/")).collect();
    let m = dir.join("manifest.toml");
    collect(&tasks, &[0, 1], &FilterRules::default(), &m).unwrap();
    let (manifest, shards) = load_dataset(&m).unwrap();
    TrainingSet::from_shards(manifest, &shards, &small().example_options(), false).unwrap()
}

// ------------------------------------------------------------------ encoders

#[test]
fn empty_instruction_is_the_null_vector() {
    let p = params(&small(), 3);
    let null = p.tensor("null_instr").unwrap().to_vec();
    assert_eq!(encode_instruction(&p, ""), null);
    assert_eq!(encode_instruction(&p, "   "), null);
    assert_ne!(encode_instruction(&p, "jump"), null);
}

#[test]
fn instruction_encoding_folds_case_and_ignores_order() {
    let p = params(&small(), 3);
    let a = encode_instruction(&p, "Lift the GREEN cube");
    let b = encode_instruction(&p, "cube green the lift");
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
    // Mean of the hashed token rows.
    let words = p.tensor("word_embed").unwrap();
    let d = p.config.embed_dim;
    let ids: Vec<usize> = tokenize("lift the green cube").iter().map(|t| token_id(t, p.config.vocab_size)).collect();
    for (j, v) in a.iter().enumerate() {
        let mean = ids.iter().map(|&i| words[i * d + j]).sum::<f64>() / ids.len() as f64;
        assert!((v - mean).abs() < 1e-12);
    }
}

#[test]
fn observation_encoding_is_deterministic_and_sensitive() {
    let p = params(&small(), 5);
    let t = &registry_list(None)[0];
    let mut s = instantiate_task(t, 0).unwrap();
    let f0 = s.observe().frame;
    let a = encode_observation(&p, &f0);
    assert_eq!(a, encode_observation(&p, &f0));
    assert_eq!(a.len(), p.config.embed_dim);
    let mut turn = ActionEvent::noop(0);
    turn.mouse_dx = 3;
    s.advance(&turn).unwrap();
    assert_ne!(a, encode_observation(&p, &s.observe().frame));
}

#[test]
fn memory_keeps_the_most_recent_window() {
    let mut m = MemoryState::new(3);
    for t in 0..5u64 {
        m.push(t * 2, vec![t as f64]);
    }
    assert_eq!(m.ticks(), vec![4, 6, 8]);
    assert_eq!(m.vectors(), vec![&[2.0][..], &[3.0], &[4.0]]);
    m.clear();
    assert!(m.is_empty());
}

#[test]
#[should_panic(expected = "strictly increasing")]
fn memory_rejects_out_of_order_ticks() {
    let mut m = MemoryState::new(3);
    m.push(5, vec![0.0]);
    m.push(5, vec![0.0]);
}

#[test]
fn forward_shapes_and_goal_probability() {
    let c = small();
    let fresh = params(&c, 1);
    let state = vec![0.3; c.embed_dim];
    // A fresh network is uniform with an even goal estimate.
    let h0 = head_forward(&fresh, &state, &encode_instruction(&fresh, "jump"), &[]);
    assert!(h0.logits.values.iter().all(|&v| v == 0.0));
    assert_eq!(h0.goal_prob(), 0.5);
    let p = perturbed(&c, 1);
    let u = encode_instruction(&p, "collect wood");
    let mem = vec![vec![0.1; c.embed_dim]; c.memory_window];
    let refs: Vec<&[f64]> = mem.iter().map(Vec::as_slice).collect();
    let h = head_forward(&p, &state, &u, &refs);
    assert_eq!(h.logits.chunk_len(), c.chunk_len);
    assert_eq!(h.logits.values.len(), c.logit_count());
    assert!(h.logits.is_finite());
    let g = h.goal_prob();
    assert!(g > 0.0 && g < 1.0);
    let dropped = head_forward(&p, &state, &encode_instruction(&p, ""), &refs);
    assert_ne!(dropped.logits, h.logits);
}

// ------------------------------------------------------------------ loss

fn mask(n: usize) -> Vec<bool> {
    vec![true; n]
}

#[test]
fn zero_logits_cost_the_uniform_entropy() {
    let l = PolicyLogits::zeros(1);
    let target = [ActionEvent::noop(0)];
    let loss = bc_loss(&l, 0.5, &target, &mask(1), &[false], 0.0);
    let expected = 16.0 * 2f64.ln() + 2.0 * 7f64.ln() + 2.0 * 2f64.ln();
    assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    // The mouse terms alone: two 7-way cross entropies.
    let mouse = expected - 18.0 * 2f64.ln();
    assert!((mouse - 2.0 * 7f64.ln()).abs() < 1e-12);
    // Goal term at p = 1/2 costs ln 2 times its weight.
    let with_goal = bc_loss(&l, 0.5, &target, &mask(1), &[true], 1.0);
    assert!((with_goal - expected - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn confident_correct_logits_cost_almost_nothing() {
    let mut l = PolicyLogits::zeros(1);
    let mut target = ActionEvent::key(0, Key::W);
    target.mouse_dx = -2;
    {
        let row = l.step_mut(0);
        for (i, k) in Key::ALL.iter().enumerate() {
            row[i] = if target.keys.contains(*k) { 20.0 } else { -20.0 };
        }
        row[KEY_COUNT + delta_to_bucket(-2)] = 20.0;
        row[KEY_COUNT + MOUSE_BUCKETS + delta_to_bucket(0)] = 20.0;
        row[KEY_COUNT + 2 * MOUSE_BUCKETS] = -20.0;
        row[KEY_COUNT + 2 * MOUSE_BUCKETS + 1] = -20.0;
    }
    let loss = bc_loss(&l, 0.5, &[target], &mask(1), &[false], 0.0);
    assert!(loss < 1e-6, "{loss}");
    assert_eq!(l.argmax(0)[0], target);
}

#[test]
fn masked_steps_contribute_nothing() {
    let l = PolicyLogits::zeros(8);
    let target = vec![ActionEvent::noop(0); 8];
    let mut m = vec![false; 8];
    assert_eq!(bc_loss(&l, 0.5, &target, &m, &[false; 8], 1.0), 0.0);
    m[3] = true;
    let one = bc_loss(&l, 0.5, &target, &m, &[false; 8], 0.0);
    assert!((one - (18.0 * 2f64.ln() + 2.0 * 7f64.ln())).abs() < 1e-12);
}

#[test]
fn guidance_at_zero_is_the_conditioned_policy() {
    let c = small();
    let p = Arc::new(perturbed(&c, 9));
    let state = vec![0.2; c.embed_dim];
    let opts = |scale| ActOptions {
        cfg_scale: scale,
        ..ActOptions::from_params(&p)
    };
    let plain = AgentClient::new(p.clone(), "jump", opts(0.0));
    let cond = head_forward(&p, &state, &encode_instruction(&p, "jump"), &[]).logits;
    assert_eq!(plain.logits(&state), cond);
    assert_ne!(cond, head_forward(&p, &state, &encode_instruction(&p, ""), &[]).logits);
    let uncond = head_forward(&p, &state, &encode_instruction(&p, ""), &[]).logits;
    let guided = AgentClient::new(p.clone(), "jump", opts(1.0)).logits(&state);
    for ((g, c), u) in guided.values.iter().zip(&cond.values).zip(&uncond.values) {
        assert!((g - (2.0 * c - u)).abs() < 1e-12);
    }
}

// ------------------------------------------------------------------ acting

#[test]
fn interrupt_swaps_the_instruction_vector() {
    let p = Arc::new(params(&small(), 2));
    let mut a = AgentClient::new(p.clone(), "collect wood", ActOptions::from_params(&p));
    let before = a.instruction_vector().to_vec();
    a.on_control(&Message::Interrupt {
        tick: 40,
        text: "jump".into(),
    });
    assert_eq!(a.instruction(), "jump");
    assert_eq!(a.instruction_vector(), encode_instruction(&p, "jump").as_slice());
    assert_ne!(a.instruction_vector(), before.as_slice());
    assert_eq!(a.instruction_log.last().unwrap(), &(40, "jump".to_string()));
}

#[test]
fn ignoring_language_acts_on_the_null_vector() {
    let p = Arc::new(params(&small(), 2));
    let opts = ActOptions {
        ignore_instruction: true,
        ..ActOptions::from_params(&p)
    };
    let a = AgentClient::new(p.clone(), "collect wood", opts);
    assert_eq!(a.instruction_vector(), encode_instruction(&p, "").as_slice());
}

#[test]
fn agent_fills_memory_and_answers_with_offset_chunks() {
    let c = small();
    let p = Arc::new(params(&c, 4));
    let t = &registry_list(None)[0];
    let mut s = instantiate_task(t, 0).unwrap();
    let mut a = AgentClient::new(p.clone(), &t.instruction, ActOptions::from_params(&p));
    for _ in 0..6 {
        let obs = s.observe();
        let chunk = a.on_observation(&obs).unwrap();
        assert_eq!(chunk.computed_at_tick, obs.tick);
        assert_eq!(chunk.events.len(), c.chunk_len);
        assert_eq!(chunk.events[0].tick, obs.tick + u64::from(c.offset_k));
        // The same observation twice is answered once.
        assert!(a.on_observation(&obs).is_none());
        s.advance(&chunk.events[0].at(obs.tick)).unwrap();
    }
    assert_eq!(a.memory().len(), c.memory_window);
    assert_eq!(a.forwards, 6);
    a.on_control(&Message::Reset {
        seed: 0,
        task_id: None,
        world: None,
    });
    assert!(a.memory().is_empty());
}

#[test]
fn slow_policy_with_offset_misses_no_ticks() {
    let p = Arc::new(params(&small(), 4));
    let t = registry_list(None).into_iter().find(|t| t.task_id.ends_with("collect_wood")).unwrap();
    let opts = ActOptions {
        compute_ms: 150.0,
        offset_k: 2,
        ..ActOptions::from_params(&p)
    };
    let mut a = AgentClient::new(p.clone(), &t.instruction, opts);
    let config = SessionConfig {
        offset_k: 2,
        ..SessionConfig::default()
    };
    let core = SessionCore::new(instantiate_task(&t, 0).unwrap(), config, 0, None, Role::Agent, 300);
    let out = run_simulated(core, &mut a, &SimOptions::default()).unwrap();
    let missed = out.executed.iter().skip(4).filter(|e| **e == Executed::Fallback).count();
    assert_eq!(missed, 0);
    assert_eq!(out.stats.late, 0);
}

// ------------------------------------------------------------------ training

#[test]
fn short_training_lowers_the_loss_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let set = training_set(dir.path());
    assert!(set.example_count() > 0);
    let run = || {
        let mut losses = Vec::new();
        let t = train(&set, &small(), |_, m| losses.push(m.loss)).unwrap();
        (t, losses)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    assert_eq!(a.params.hash(), b.params.hash());
    assert_eq!(la.len(), 200);
    let head: f64 = la[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = la[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < 0.7 * head, "loss {head:.3} -> {tail:.3}");
    assert!(la.iter().all(|l| l.is_finite()));
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let set = training_set(dir.path());
    let config = AgentConfig {
        steps: 30,
        ..small()
    };
    let mut t = train(&set, &config, |_, _| {}).unwrap();
    let ck = t.checkpoint("{\"seed\":0}");
    let path = dir.path().join("a.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    let mut resumed = Trainer::from_checkpoint(back);
    let next = t.train_on(&set).unwrap();
    let next_resumed = resumed.train_on(&set).unwrap();
    assert_eq!(next, next_resumed);
    assert_eq!(t.params.hash(), resumed.params.hash());

    let bytes = ck.to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
}

#[test]
fn non_finite_parameters_stop_training_with_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let set = training_set(dir.path());
    let mut t = Trainer::new(&small()).unwrap();
    t.params.tensor_mut("out_b").unwrap()[0] = f64::NAN;
    let before = t.params.clone();
    match t.train_on(&set) {
        Err(TrainError::NonFinite { step: 0, top, .. }) => assert!(!top.is_empty()),
        other => panic!("{other:?}"),
    }
    assert_eq!(t.params.data.len(), before.data.len());
    assert_eq!(t.step, 0);
}

#[test]
fn config_validation_and_toml() {
    let c = AgentConfig::desk();
    assert_eq!(AgentConfig::from_toml(&c.to_toml()).unwrap(), c);
    assert!(AgentConfig::from_toml("embed_dim = 0").is_err());
    assert!(AgentConfig::from_toml("instruction_dropout = 1.0").is_err());
    assert!(AgentConfig::from_toml("key_count = 12").is_err());
    assert!(AgentConfig::from_toml("unknown = 1").is_err());
}

#[test]
fn expert_reference_agent_solves_through_the_harness() {
    let t = registry_list(None).into_iter().find(|t| t.task_id.ends_with("turn_left")).unwrap();
    let r = run_episode(&AgentRef::Expert, &t, 0, &EpisodeOptions::default()).unwrap();
    assert_eq!(r.outcome.status, EpisodeStatus::Success);
}
