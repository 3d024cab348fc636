use std::collections::BTreeMap;
use std::sync::Arc;

use simkit::agent::{train, AgentConfig, Parameters, TrainingSet};
use simkit::datapipe::{collect, expert_plan, load_dataset, FilterRules};
use simkit::evalharness::*;
use simkit::worldcore::*;
use simkit::worlds::registry_list;

fn task(suffix: &str) -> TaskSpec {
    registry_list(None).into_iter().find(|t| t.task_id.ends_with(suffix)).unwrap()
}

fn ev(tick: u64, text: &str) -> TextEvent {
    TextEvent::new(tick, text)
}

// ------------------------------------------------------------------ episodes

#[test]
fn expert_succeeds_and_zero_budget_times_out() {
    let t = task("two_rooms_a/lift_the_green_cube");
    let r = run_episode(&AgentRef::Expert, &t, 4, &EpisodeOptions::default()).unwrap();
    assert_eq!(r.outcome.status, EpisodeStatus::Success);
    assert!(r.outcome.ticks_used <= t.budget_ticks);
    let broke = TaskSpec { budget_ticks: 0, ..t };
    let r = run_episode(&AgentRef::Silent, &broke, 4, &EpisodeOptions::default()).unwrap();
    assert_eq!(r.outcome.status, EpisodeStatus::Timeout);
    assert_eq!(r.outcome.ticks_used, 0);
}

#[test]
fn silent_agent_times_out_on_a_ground_truth_task() {
    let t = task("two_rooms_a/go_to_the_blue_cube");
    let r = run_episode(&AgentRef::Silent, &t, 0, &EpisodeOptions::default()).unwrap();
    assert_eq!(r.outcome.status, EpisodeStatus::Timeout);
    assert_eq!(r.outcome.ticks_used, t.budget_ticks);
}

#[test]
fn ocr_patterns_match_in_order() {
    let events = [ev(3, "Wood +1"), ev(9, "Crafted plank"), ev(12, "Wood +1")];
    let p = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    assert!(ocr_evaluate(&events, &p(&[r"Wood \+\d+"]), None, &[]).unwrap());
    assert!(ocr_evaluate(&events, &p(&["Wood", "plank", "Wood"]), None, &[]).unwrap());
    assert!(!ocr_evaluate(&events, &p(&["plank", "plank"]), None, &[]).unwrap());
    assert!(!ocr_evaluate(&events, &p(&["Stone"]), None, &[]).unwrap());
    assert!(!ocr_evaluate(&[], &p(&["Wood"]), None, &[]).unwrap());
    assert!(ocr_evaluate(&events, &p(&["(unclosed"]), None, &[]).is_err());
    let re: Vec<regex::Regex> = vec![regex::Regex::new("plank").unwrap(), regex::Regex::new("Wood").unwrap()];
    assert_eq!(ocr_match_tick(&events, &re, None, &[]), Some(12));
}

#[test]
fn ocr_action_requirement_needs_a_recent_key() {
    let events = [ev(10, "Jumped")];
    let pats = vec!["Jumped".to_string()];
    let req = Some(ActionRequirement {
        key: Key::Space,
        within_ticks: 3,
    });
    assert!(ocr_evaluate(&events, &pats, req, &[ActionEvent::key(8, Key::Space)]).unwrap());
    assert!(ocr_evaluate(&events, &pats, req, &[ActionEvent::key(7, Key::Space)]).unwrap());
    assert!(!ocr_evaluate(&events, &pats, req, &[ActionEvent::key(6, Key::Space)]).unwrap());
    assert!(!ocr_evaluate(&events, &pats, req, &[ActionEvent::key(10, Key::Space)]).unwrap());
    assert!(!ocr_evaluate(&events, &pats, req, &[ActionEvent::key(9, Key::W)]).unwrap());
}

#[test]
fn evaluator_specs_validate() {
    assert!(EvaluatorSpec::OcrPattern {
        patterns: vec![],
        action: None
    }
    .validate()
    .is_err());
    assert!(EvaluatorSpec::Judged { rubric: "  ".into() }.validate().is_err());
    for t in registry_list(None) {
        t.evaluator_spec.validate().unwrap();
    }
}

// ------------------------------------------------------------------ switches

/// `lead` no-ops, then the expert plan for `task` from the state they reach.
fn delayed_expert(task: &TaskSpec, seed: u64, lead: u64) -> Vec<ActionEvent> {
    let mut s = instantiate_task(task, seed).unwrap();
    let mut plan = Vec::new();
    for t in 0..lead {
        let a = ActionEvent::noop(t);
        s.advance(&a).unwrap();
        plan.push(a);
    }
    plan.extend(expert_plan(task, &s).unwrap());
    plan
}

#[test]
fn switch_test_rewards_following_the_new_instruction() {
    let a = task("two_rooms_a/lift_the_green_cube");
    let b = task("two_rooms_a/go_to_the_yellow_ball");
    assert_eq!(a.save_state_ref, b.save_state_ref);
    let opts = EpisodeOptions::default();
    let switch = 6;

    let follows_b = AgentRef::Scripted(delayed_expert(&b, 0, switch));
    let r = switch_test(&follows_b, &a, &b, 0, switch, &opts).unwrap();
    assert_eq!(r.outcome.status, EpisodeStatus::Success);
    assert!(!r.degenerate && !r.a_completed_after_switch);
    assert!(r.b_success_tick.unwrap() > switch);

    let frozen_on_a = AgentRef::Scripted(delayed_expert(&a, 0, switch));
    let r = switch_test(&frozen_on_a, &a, &b, 0, switch, &opts).unwrap();
    assert_eq!(r.outcome.status, EpisodeStatus::Failure);
    assert!(r.a_completed_after_switch);

    let r = switch_test(&AgentRef::Expert, &a, &b, 0, u64::from(a.budget_ticks), &opts).unwrap();
    assert!(r.degenerate);
    assert_eq!(r.outcome.status, EpisodeStatus::Success);

    let elsewhere = task("two_rooms_b/turn_left");
    assert!(switch_test(&AgentRef::Expert, &a, &elsewhere, 0, switch, &opts).is_err());
}

// ------------------------------------------------------------------ probes and likelihood

#[test]
fn contradictory_probe_never_passes() {
    let never = ActionPredicate::All {
        of: vec![ActionPredicate::KeyPressed { key: Key::W }, ActionPredicate::KeyAbsent { key: Key::W }],
    };
    let always = ActionPredicate::Any {
        of: vec![ActionPredicate::KeyPressed { key: Key::W }, ActionPredicate::KeyAbsent { key: Key::W }],
    };
    let config = AgentConfig::tiny();
    for seed in 0..5 {
        let p = Parameters::init(&config, seed);
        for t in registry_list(None).iter().step_by(7) {
            let frame = instantiate_task(t, seed).unwrap().observe().frame;
            assert!(!static_probe(&p, &frame, &t.instruction, &never));
            assert!(static_probe(&p, &frame, &t.instruction, &always));
        }
    }
}

fn small_set(dir: &std::path::Path, config: &AgentConfig) -> TrainingSet {
    let tasks: Vec<TaskSpec> = registry_list(None).into_iter().filter(|t| t.task_id.contains("/glade/")).collect();
    let m = dir.join("manifest.toml");
    collect(&tasks, &[0, 1], &FilterRules::default(), &m).unwrap();
    let (manifest, shards) = load_dataset(&m).unwrap();
    TrainingSet::from_shards(manifest, &shards, &config.example_options(), false).unwrap()
}

#[test]
fn held_out_likelihood_against_the_uniform_policy() {
    let config = AgentConfig {
        memory_window: 4,
        steps: 150,
        ..AgentConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let set = small_set(dir.path(), &config);
    let examples: Vec<_> = set.collections.iter().flatten().flatten().collect();
    let uniform = logprob_eval(&Parameters::zeros(&config), &set, &examples).unwrap();
    let expected = 16.0 * 2f64.ln() + 2.0 * 7f64.ln() + 2.0 * 2f64.ln();
    assert!((uniform - expected).abs() < 1e-9, "{uniform} vs {expected}");
    let trained = train(&set, &config, |_, _| {}).unwrap();
    let nll = logprob_eval(&trained.params, &set, &examples).unwrap();
    assert!(nll >= 0.0);
    assert!(nll < uniform, "{nll} >= {uniform}");
    assert!(matches!(logprob_eval(&trained.params, &set, &[]), Err(EvalError::EmptySplit)));
}

// ------------------------------------------------------------------ statistics

#[test]
fn success_rate_boundaries() {
    assert_eq!(success_rate(0, 10).unwrap(), (0.0, 0.0));
    assert_eq!(success_rate(10, 10).unwrap(), (1.0, 0.0));
    let (p, h) = success_rate(5, 10).unwrap();
    assert_eq!(p, 0.5);
    assert!((h - 1.96 * (0.025f64).sqrt()).abs() < 1e-12);
    assert!(matches!(success_rate(0, 0), Err(StatsError::Empty)));
}

#[test]
fn normalization_examples() {
    let m = |v: &[(&str, f64)]| v.iter().map(|(k, x)| (k.to_string(), *x)).collect::<BTreeMap<_, _>>();
    let n = normalize_vs_specialist(&m(&[("a", 0.5), ("b", 0.4), ("c", 0.3)]), &m(&[("a", 0.4), ("b", 0.4), ("c", 0.0)]));
    assert!((n.per_env["a"] - 125.0).abs() < 1e-9);
    assert!((n.per_env["b"] - 100.0).abs() < 1e-9);
    assert_eq!(n.excluded, vec!["c".to_string()]);
    assert!((n.aggregate.unwrap() - 112.5).abs() < 1e-9);
    let none = normalize_vs_specialist(&m(&[("a", 0.5)]), &m(&[("a", 0.0)]));
    assert_eq!(none.aggregate, None);
}

#[test]
fn constant_scores_are_never_significant() {
    for mode in [PermutationMode::Pooled, PermutationMode::Paired] {
        let r = permutation_test(&[0.5; 6], &[0.5; 6], 1000, 0, mode).unwrap();
        assert_eq!(r.p, 1.0);
        assert!(r.exhaustive);
    }
    assert!(matches!(permutation_test(&[], &[1.0], 10, 0, PermutationMode::Pooled), Err(StatsError::Empty)));
    assert!(matches!(
        permutation_test(&[1.0], &[1.0, 2.0], 10, 0, PermutationMode::Paired),
        Err(StatsError::Unpaired(1, 2))
    ));
    // 30 vs 30 is far beyond exhaustive enumeration.
    let a: Vec<f64> = (0..30).map(|i| (i % 3) as f64).collect();
    let r = permutation_test(&a, &a, 999, 1, PermutationMode::Pooled).unwrap();
    assert!(!r.exhaustive);
    assert_eq!(r.p, 1.0);
}

#[test]
fn judge_majority_and_duplicates() {
    let rec = |j: &str, ok: bool| JudgmentRecord {
        episode_id: "e".into(),
        judge_id: j.into(),
        rating: if ok { Rating::Success } else { Rating::Failure },
        note: String::new(),
    };
    assert!(aggregate_judgments(&[rec("a", true), rec("b", true), rec("c", false)]).unwrap());
    assert!(!aggregate_judgments(&[rec("a", true), rec("b", false)]).unwrap());
    assert!(matches!(
        aggregate_judgments(&[rec("a", true), rec("a", true)]),
        Err(StatsError::DuplicateJudgment { .. })
    ));
    assert!(parse_judgments("{\"episode_id\":\"e\"}\n").is_err());
}

// ------------------------------------------------------------------ reports

/// Deterministic pseudo-outcomes for every condition of the default suite.
fn synthetic_report() -> EvalReport {
    let suite = SuiteConfig {
        n_resamples: 500,
        ..SuiteConfig::default()
    };
    let tasks = registry_list(None);
    let mut outcomes: BTreeMap<(Condition, u64), Vec<TaskOutcome>> = BTreeMap::new();
    for cond in &suite.conditions {
        let worlds = cond.eval_worlds(&suite.worlds);
        for &lambda in &suite.cfg_scales {
            for &run_seed in &suite.run_seeds {
                for t in tasks.iter().filter(|t| worlds.contains(&t.world_id)) {
                    for &eval_seed in suite.eval_seeds(t.world_id) {
                        // Multiworld copies the specialist of each world.
                        let source = match cond {
                            Condition::Multiworld => Condition::Specialist { world: t.world_id },
                            c => c.clone(),
                        };
                        let h = simkit::codec::fnv1a64(format!("{}{}{}{run_seed}{eval_seed}", source.id(), lambda, t.task_id).as_bytes());
                        let ok = h % 3 != 0;
                        outcomes.entry((cond.clone(), lambda.to_bits())).or_default().push(TaskOutcome {
                            task_id: t.task_id.clone(),
                            world: t.world_id,
                            skill: t.skill_category,
                            run_seed,
                            eval_seed,
                            status: if ok { EpisodeStatus::Success } else { EpisodeStatus::Timeout },
                            ticks_used: 10,
                        });
                    }
                }
            }
        }
    }
    EvalReport::build(&suite, outcomes, Vec::new())
}

#[test]
fn report_lists_exactly_the_configured_conditions() {
    let r = synthetic_report();
    let labels: Vec<&str> = r.conditions.iter().map(|c| c.label.as_str()).collect();
    let mut expected = Vec::new();
    for c in &r.suite.conditions {
        for l in &r.suite.cfg_scales {
            expected.push(label(c, *l));
        }
    }
    assert_eq!(labels, expected.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(labels.len(), 8 * 2);
}

#[test]
fn specialist_copy_normalizes_to_one_hundred_percent() {
    let r = synthetic_report();
    for l in ["multiworld@1", "multiworld@0"] {
        let n = &r.relative_to_specialist[l];
        assert_eq!(n.per_env.len(), 3);
        for (w, v) in &n.per_env {
            assert!((v - 100.0).abs() < 1e-9, "{l} {w} {v}");
        }
    }
    for w in WorldId::ALL {
        let spec = &r.relative_to_specialist[&format!("specialist:{w}@1")];
        assert!((spec.per_env[w.as_str()] - 100.0).abs() < 1e-9);
    }
}

#[test]
fn report_has_a_p_value_per_world_and_comparison() {
    let r = synthetic_report();
    for l in &r.suite.cfg_scales {
        for w in WorldId::ALL {
            for (a, b) in [
                (Condition::Multiworld, Condition::Specialist { world: w }),
                (Condition::Multiworld, Condition::NoLanguage),
                (Condition::ZeroShot { held_out: w }, Condition::NoLanguage),
            ] {
                let c = r
                    .comparisons
                    .iter()
                    .find(|c| c.world == w && c.a == label(&a, *l) && c.b == label(&b, *l))
                    .unwrap_or_else(|| panic!("missing {} vs {} in {w}", a.id(), b.id()));
                assert!(c.p > 0.0 && c.p <= 1.0);
            }
        }
    }
    // Identical per-task scores.
    let same = r.comparisons.iter().find(|c| c.a == "multiworld@1" && c.b.starts_with("specialist")).unwrap();
    assert_eq!(same.p, 1.0);
}

#[test]
fn report_regenerates_byte_identically() {
    let r = synthetic_report();
    let json = r.to_json();
    let back = EvalReport::from_json(&json).unwrap();
    assert_eq!(back, r);
    assert_eq!(back.rebuild().to_json(), json);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    r.save(a.path()).unwrap();
    back.rebuild().save(b.path()).unwrap();
    for f in ["report.json", "report.txt", "report.svg"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let text = r.render_text();
    assert!(text.contains("multiworld@1") && text.contains("zero_shot:harvest@0"));
    assert!(r.render_svg().starts_with("<svg"));
}

#[test]
fn missing_checkpoints_are_skipped_not_fatal() {
    let worlds = vec![WorldId::Harvest];
    let suite = SuiteConfig {
        worlds: worlds.clone(),
        conditions: vec![Condition::Multiworld, Condition::Specialist { world: WorldId::Harvest }],
        run_seeds: vec![0],
        cfg_scales: vec![1.0],
        n_resamples: 100,
        ..SuiteConfig::default()
    };
    let tasks: Vec<TaskSpec> = registry_list(None).into_iter().filter(|t| t.task_id.contains("/glade/")).collect();
    let mut cks = CheckpointSet::new();
    cks.insert(("multiworld".into(), 0), Arc::new(Parameters::init(&AgentConfig::tiny(), 0)));
    let r = run_ablation_suite(&suite, &tasks, &cks).unwrap();
    assert_eq!(r.skipped, vec!["specialist:harvest seed 0: missing checkpoint".to_string()]);
    assert_eq!(r.conditions.len(), 1);
    let c = &r.conditions[0];
    assert_eq!(c.overall.n, tasks.len() * suite.eval_seeds(WorldId::Harvest).len());
    assert!(r.comparisons.is_empty());
    let empty = run_ablation_suite(&suite, &tasks, &CheckpointSet::new()).unwrap();
    assert!(empty.conditions.is_empty());
    assert_eq!(empty.skipped.len(), 2);
}

#[test]
fn condition_ids_round_trip() {
    for c in Condition::standard(&WorldId::ALL) {
        assert_eq!(Condition::parse(&c.id()), Some(c.clone()));
    }
    assert_eq!(Condition::parse("specialist:moon"), None);
    assert_eq!(Condition::standard(&WorldId::ALL).len(), 8);
    assert_eq!(Condition::standard(&[WorldId::Harvest]).len(), 3);
    let z = Condition::ZeroShot { held_out: WorldId::BuildLab };
    assert!(!z.train_worlds(&WorldId::ALL).contains(&WorldId::BuildLab));
    assert_eq!(z.eval_worlds(&WorldId::ALL), vec![WorldId::BuildLab]);
}
