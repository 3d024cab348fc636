use std::path::Path;
use std::process::{Command, Output};

use simkit::evalharness::{run_ablation_suite, run_episode, AgentRef, CheckpointSet, Condition, EpisodeOptions, SuiteConfig};
use simkit::worldcore::WorldId;
use simkit::worlds::registry_list;

fn simactl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simactl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "memory_window = 4\nbatch_size = 8\n";

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&simactl(&[])), 2);
    assert_eq!(code(&simactl(&["frobnicate"])), 2);
    assert_eq!(code(&simactl(&["registry", "--worlds", "moon"])), 2);
    assert_eq!(code(&simactl(&["replay", "/nonexistent/t.mwtr"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let out = simactl(&["collect", "--out", p(dir.path()), "--seeds", "5..2"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad seed list"));
    assert_eq!(code(&simactl(&["--version"])), 0);
}

#[test]
fn registry_lists_and_exports() {
    let out = simactl(&["registry", "--worlds", "harvest"]);
    assert_eq!(code(&out), 0);
    let listing = String::from_utf8(out.stdout).unwrap();
    assert!(listing.lines().all(|l| l.starts_with("harvest/")));
    assert!(listing.contains("collect wood"));
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("r.toml");
    assert_eq!(code(&simactl(&["registry", "--worlds", "harvest", "--out", p(&file)])), 0);
    let again = simactl(&["registry", "--registry", p(&file)]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), listing);
}

fn shard_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir.join("harvest")).unwrap() {
        let path = e.unwrap().path();
        out.push((path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap()));
    }
    out.sort();
    out
}

#[test]
fn collect_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = simactl(&["collect", "--out", p(d.path()), "--seeds", "0,1", "--worlds", "harvest"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let sa = shard_bytes(a.path());
    assert_eq!(sa.len(), 2 * registry_list(None).iter().filter(|t| t.world_id == WorldId::Harvest).count());
    assert_eq!(sa, shard_bytes(b.path()));
    assert!(a.path().join("manifest.toml").exists());
    assert!(a.path().join("filter_report.json").exists());
}

fn metrics(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v.get("step").is_some())
        .collect()
}

#[test]
fn resumed_training_continues_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    assert_eq!(code(&simactl(&["collect", "--out", p(&data), "--seeds", "0", "--worlds", "harvest"])), 0);
    let manifest = data.join("manifest.toml");
    let config = d.join("agent.toml");
    std::fs::write(&config, SMALL).unwrap();
    let train = |out: &Path, steps: &str, resume: Option<&Path>, m: &Path| {
        let mut args = vec!["train", "--manifest", p(&manifest), "--config", p(&config), "--out", p(out), "--steps", steps, "--metrics", p(m)];
        if let Some(r) = resume {
            args.extend(["--resume", p(r)]);
        }
        let o = simactl(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    let straight = d.join("straight.mwck");
    train(&straight, "12", None, &d.join("straight.jsonl"));
    let half = d.join("half.mwck");
    train(&half, "6", None, &d.join("resumed.jsonl"));
    let resumed = d.join("resumed.mwck");
    train(&resumed, "12", Some(&half), &d.join("resumed.jsonl"));

    assert_eq!(std::fs::read(&straight).unwrap(), std::fs::read(&resumed).unwrap());
    let a = metrics(&d.join("straight.jsonl"));
    let b = metrics(&d.join("resumed.jsonl"));
    assert_eq!(a.len(), 12);
    assert_eq!(a, b);
    let steps: Vec<u64> = b.iter().map(|v| v["step"].as_u64().unwrap()).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));

    let bad = d.join("bad.toml");
    std::fs::write(&bad, "embed_dim = 0\n").unwrap();
    let o = simactl(&["train", "--manifest", p(&manifest), "--config", p(&bad), "--out", p(&d.join("x.mwck"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn replay_checks_recorded_hashes() {
    let t = registry_list(None).into_iter().find(|t| t.task_id.ends_with("collect_wood")).unwrap();
    let mut opts = EpisodeOptions::default();
    opts.session.record = true;
    let traj = run_episode(&AgentRef::Expert, &t, 0, &opts).unwrap().trajectory.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.mwtr");
    traj.save(&good).unwrap();
    let out = simactl(&["replay", p(&good), "--hashes"]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), traj.len() + 1);
    assert!(stdout.contains("all frame hashes match"));

    let mut bad = traj.clone();
    let i = bad.actions.iter().position(|a| !a.is_noop()).unwrap();
    bad.actions[i] = simkit::worldcore::ActionEvent::noop(i as u64);
    let badp = dir.path().join("bad.mwtr");
    bad.save(&badp).unwrap();
    let out = simactl(&["replay", p(&badp)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn report_regenerates_the_same_files() {
    let suite = SuiteConfig {
        worlds: vec![WorldId::Harvest],
        conditions: vec![Condition::Multiworld],
        run_seeds: vec![0],
        cfg_scales: vec![1.0],
        n_resamples: 100,
        ..SuiteConfig::default()
    };
    let tasks: Vec<_> = registry_list(None).into_iter().filter(|t| t.world_id == WorldId::Harvest).take(4).collect();
    let mut cks = CheckpointSet::new();
    let config = simkit::agent::AgentConfig::tiny();
    cks.insert(("multiworld".into(), 0), std::sync::Arc::new(simkit::agent::Parameters::init(&config, 0)));
    let report = run_ablation_suite(&suite, &tasks, &cks).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    report.save(a.path()).unwrap();
    let out = simactl(&["report", "--input", p(&a.path().join("report.json")), "--out", p(b.path())]);
    assert_eq!(code(&out), 0);
    for f in ["report.json", "report.txt", "report.svg"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let missing = simactl(&["eval", "--checkpoints", p(b.path()), "--out", p(&b.path().join("r"))]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn serve_stops_after_its_time_limit() {
    let dir = tempfile::tempdir().unwrap();
    let out = simactl(&["serve", "--addr", "127.0.0.1:0", "--data", p(dir.path()), "--for-secs", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}
