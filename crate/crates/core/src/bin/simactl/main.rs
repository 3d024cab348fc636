//! `simactl`: serve sessions, collect data, train, evaluate, replay and report.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use simkit::agent::{AgentConfig, Checkpoint, Parameters, StepMetrics, Trainer, TrainingSet};
use simkit::datapipe::{collect, load_dataset, FilterRules};
use simkit::evalharness::{
    run_ablation_suite, run_episode, train_condition, AgentRef, CheckpointSet, Condition, EpisodeOptions, EvalReport, SuiteConfig,
};
use simkit::netproto::{replay, Server, ServerConfig, Trajectory};
use simkit::worldcore::{EpisodeStatus, TaskSpec, WorldId};
use simkit::worlds::{load_registry, registry_list, registry_to_toml};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "simactl", version, about = "Instructable toy worlds: serve, collect, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the session protocol, the WebSocket gateway, static files and uploads.
    Serve(ServeArgs),
    /// Run scripted experts on registry tasks and write filtered shards plus a manifest.
    Collect(CollectArgs),
    /// Train an agent on a manifest.
    Train(TrainArgs),
    /// Evaluate checkpoints with the ablation suite and write a report.
    Eval(EvalArgs),
    /// Train every ablation condition, then evaluate them.
    Ablate(AblateArgs),
    /// Re-execute a recorded trajectory and check its frame hashes.
    Replay(ReplayArgs),
    /// Regenerate a report's text and chart from its stored outcomes.
    Report(ReportArgs),
    /// Print or export the task registry.
    Registry(RegistryArgs),
}

#[derive(Args)]
struct TaskSelection {
    /// Registry TOML file; the built-in registry when absent.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Comma-separated worlds.
    #[arg(long, value_delimiter = ',')]
    worlds: Vec<String>,
}

impl TaskSelection {
    fn worlds(&self) -> Result<Vec<WorldId>, CliError> {
        if self.worlds.is_empty() {
            return Ok(WorldId::ALL.to_vec());
        }
        self.worlds
            .iter()
            .map(|w| WorldId::parse(w).ok_or_else(|| usage(format!("unknown world {w:?}"))))
            .collect()
    }

    fn tasks(&self) -> Result<Vec<TaskSpec>, CliError> {
        let worlds = self.worlds()?;
        let all = match &self.registry {
            Some(p) => load_registry(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
            None => registry_list(None),
        };
        Ok(all.into_iter().filter(|t| worlds.contains(&t.world_id)).collect())
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: SocketAddr,
    /// Trajectories go to `<data>/trajectories`, uploads to `<data>/uploads`.
    #[arg(long, default_value = "serve-data")]
    data: PathBuf,
    /// Static client assets.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Stop after this many seconds.
    #[arg(long)]
    for_secs: Option<u64>,
    #[command(flatten)]
    tasks: TaskSelection,
}

#[derive(Args)]
struct CollectArgs {
    /// Output directory; receives manifest.toml, per-world shard directories and
    /// filter_report.json.
    #[arg(long)]
    out: PathBuf,
    /// Seeds as `a..b` or a comma list.
    #[arg(long, default_value = "0..5")]
    seeds: String,
    /// Filter rules TOML.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[command(flatten)]
    tasks: TaskSelection,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Agent config TOML; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// JSON lines of step metrics.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Steps between fast evaluations on a research-task subset; 0 disables.
    #[arg(long, default_value_t = 0)]
    eval_every: u64,
    /// Steps between checkpoint saves; 0 saves only at the end.
    #[arg(long, default_value_t = 0)]
    save_every: u64,
    /// Train with every instruction removed.
    #[arg(long)]
    no_language: bool,
    /// Restrict training data to these worlds.
    #[arg(long, value_delimiter = ',')]
    worlds: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of checkpoints named `<condition>-s<seed>.mwck`.
    #[arg(long)]
    checkpoints: PathBuf,
    /// Suite TOML; the standard suite otherwise.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tasks: TaskSelection,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Receives `checkpoints/` and the report.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tasks: TaskSelection,
}

#[derive(Args)]
struct ReplayArgs {
    trajectory: PathBuf,
    /// Print every frame hash.
    #[arg(long)]
    hashes: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json written by `eval` or `ablate`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegistryArgs {
    /// Write TOML here instead of listing.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tasks: TaskSelection,
}

enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(anyhow!(msg.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Serve(a) => cmd_serve(a),
        Cmd::Collect(a) => cmd_collect(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Ablate(a) => cmd_ablate(a),
        Cmd::Replay(a) => cmd_replay(a),
        Cmd::Report(a) => cmd_report(a),
        Cmd::Registry(a) => cmd_registry(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || usage(format!("bad seed list {s:?}; use a..b or a,b,c"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_agent_config(path: Option<&Path>) -> Result<AgentConfig, CliError> {
    match path {
        Some(p) => AgentConfig::from_toml(&read_text(p)?).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => Ok(AgentConfig::default()),
    }
}

fn load_suite(path: Option<&Path>, worlds: &[WorldId]) -> Result<SuiteConfig, CliError> {
    match path {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => Ok(SuiteConfig {
            worlds: worlds.to_vec(),
            conditions: Condition::standard(worlds),
            ..SuiteConfig::default()
        }),
    }
}

fn cmd_serve(a: ServeArgs) -> Result<(), CliError> {
    let mut config = ServerConfig::new(a.addr, &a.data, a.tasks.tasks()?);
    config.static_dir = a.static_dir;
    let server = Server::bind(config).with_context(|| format!("binding {}", a.addr))?;
    let handle = server.shutdown_handle();
    let h = handle.clone();
    ctrlc::set_handler(move || h.shutdown()).context("installing the interrupt handler")?;
    if let Some(secs) = a.for_secs {
        let h = handle.clone();
        std::thread::spawn(move || {
            std::thread::sleep(Duration::from_secs(secs));
            h.shutdown();
        });
    }
    log::info!("simkit {VERSION} listening on {}", server.local_addr().context("local address")?);
    server.run().context("serving")?;
    log::info!("shut down");
    Ok(())
}

fn cmd_collect(a: CollectArgs) -> Result<(), CliError> {
    let tasks = a.tasks.tasks()?;
    if tasks.is_empty() {
        return Err(usage("no tasks selected"));
    }
    let seeds = parse_seeds(&a.seeds)?;
    let rules: FilterRules = match &a.rules {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => FilterRules::default(),
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let summary = collect(&tasks, &seeds, &rules, &a.out.join("manifest.toml")).context("collecting")?;
    let record = json!({ "version": VERSION, "seeds": seeds, "rules": rules, "summary": summary });
    std::fs::write(a.out.join("collect.json"), serde_json::to_string_pretty(&record).expect("json") + "\n")
        .context("writing collect.json")?;
    println!("{} shards from {} tasks x {} seeds", summary.shards, summary.tasks, seeds.len());
    Ok(())
}

fn load_training_set(manifest: &Path, config: &AgentConfig, strip: bool) -> Result<TrainingSet, CliError> {
    let (m, shards) = load_dataset(manifest).map_err(|e| usage(format!("{}: {e}", manifest.display())))?;
    TrainingSet::from_shards(m, &shards, &config.example_options(), strip).map_err(|e| CliError::Runtime(e.into()))
}

/// A quarter of the research-world tasks, one episode each.
fn fast_eval_tasks() -> Vec<TaskSpec> {
    registry_list(None)
        .into_iter()
        .filter(|t| t.world_id.is_research())
        .step_by(4)
        .collect()
}

fn fast_eval(params: &Arc<Parameters>, tasks: &[TaskSpec], no_language: bool) -> f64 {
    let mut agent = AgentRef::policy(params.clone());
    if let AgentRef::Policy { opts, .. } = &mut agent {
        opts.ignore_instruction = no_language;
    }
    let wins = tasks
        .iter()
        .filter(|t| {
            run_episode(&agent, t, 1000, &EpisodeOptions::default())
                .is_ok_and(|r| r.outcome.status == EpisodeStatus::Success)
        })
        .count();
    wins as f64 / tasks.len().max(1) as f64
}

fn checkpoint_meta(manifest: &Path, extra: serde_json::Value) -> String {
    json!({ "version": VERSION, "manifest": manifest.display().to_string(), "run": extra }).to_string()
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut trainer = match &a.resume {
        Some(p) => Trainer::from_checkpoint(Checkpoint::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?),
        None => {
            let mut c = load_agent_config(a.config.as_deref())?;
            if let Some(s) = a.seed {
                c.seed = s;
            }
            Trainer::new(&c).map_err(|e| usage(e.to_string()))?
        }
    };
    if let Some(s) = a.steps {
        trainer.params.config.steps = s;
    }
    let config = trainer.params.config.clone();
    let mut set = load_training_set(&a.manifest, &config, a.no_language)?;
    if !a.worlds.is_empty() {
        let worlds = TaskSelection {
            registry: None,
            worlds: a.worlds.clone(),
        }
        .worlds()?;
        set = set.restrict(&worlds).map_err(|e| usage(e.to_string()))?;
    }
    log::info!("{} examples; training to step {}", set.example_count(), config.steps);
    let mut metrics = match &a.metrics {
        Some(p) => {
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| format!("opening {}", p.display()))?;
            writeln!(f, "{}", json!({ "version": VERSION, "config": config, "start_step": trainer.step }))
                .context("writing metrics")?;
            Some(f)
        }
        None => None,
    };
    let run = json!({ "no_language": a.no_language, "worlds": a.worlds });
    let eval_tasks = fast_eval_tasks();
    let started = Instant::now();
    while trainer.step < config.steps {
        let m: StepMetrics = trainer.train_on(&set).map_err(|e| CliError::Runtime(e.into()))?;
        let mut line = serde_json::to_value(&m).expect("metrics serialize");
        if a.eval_every > 0 && trainer.step % a.eval_every == 0 {
            let rate = fast_eval(&Arc::new(trainer.params.clone()), &eval_tasks, a.no_language);
            line["fast_eval_success"] = json!(rate);
            log::info!("step {}: loss {:.4}, fast eval {:.3}", trainer.step, m.loss, rate);
        } else if trainer.step % 100 == 0 {
            log::info!("step {}: loss {:.4}", trainer.step, m.loss);
        }
        if let Some(f) = metrics.as_mut() {
            writeln!(f, "{line}").context("writing metrics")?;
        }
        if a.save_every > 0 && trainer.step % a.save_every == 0 {
            trainer
                .checkpoint(&checkpoint_meta(&a.manifest, run.clone()))
                .save(&a.out)
                .context("saving checkpoint")?;
        }
    }
    trainer
        .checkpoint(&checkpoint_meta(&a.manifest, run))
        .save(&a.out)
        .context("saving checkpoint")?;
    println!("trained {} steps in {:.1}s -> {}", trainer.step, started.elapsed().as_secs_f64(), a.out.display());
    Ok(())
}

fn checkpoint_name(cond: &Condition, seed: u64) -> String {
    format!("{}-s{seed}.mwck", cond.id().replace(':', "_"))
}

fn load_checkpoints(dir: &Path, suite: &SuiteConfig) -> Result<CheckpointSet, CliError> {
    let mut out = CheckpointSet::new();
    for cond in &suite.conditions {
        for &seed in &suite.run_seeds {
            let p = dir.join(checkpoint_name(cond, seed));
            if !p.exists() {
                continue;
            }
            let ck = Checkpoint::load(&p).with_context(|| format!("loading {}", p.display()))?;
            out.insert((cond.id(), seed), Arc::new(ck.params));
        }
    }
    Ok(out)
}

fn write_report(report: &EvalReport, out: &Path) -> Result<(), CliError> {
    report.save(out).with_context(|| format!("writing report to {}", out.display()))?;
    print!("{}", report.render_text());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let suite = load_suite(a.suite.as_deref(), &a.tasks.worlds()?)?;
    let tasks = a.tasks.tasks()?;
    let checkpoints = load_checkpoints(&a.checkpoints, &suite)?;
    if checkpoints.is_empty() {
        return Err(usage(format!("no checkpoints found in {}", a.checkpoints.display())));
    }
    let report = run_ablation_suite(&suite, &tasks, &checkpoints).context("evaluating")?;
    write_report(&report, &a.out)
}

fn cmd_ablate(a: AblateArgs) -> Result<(), CliError> {
    let worlds = a.tasks.worlds()?;
    let suite = load_suite(a.suite.as_deref(), &worlds)?;
    let config = load_agent_config(a.config.as_deref())?;
    let tasks = a.tasks.tasks()?;
    let full = load_training_set(&a.manifest, &config, false)?;
    let stripped = load_training_set(&a.manifest, &config, true)?;
    let dir = a.out.join("checkpoints");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for cond in &suite.conditions {
        for &seed in &suite.run_seeds {
            let path = dir.join(checkpoint_name(cond, seed));
            if path.exists() {
                log::info!("{} seed {seed}: reusing {}", cond.id(), path.display());
                continue;
            }
            let started = Instant::now();
            let t = train_condition(&full, &stripped, cond, &suite.worlds, &config, seed).map_err(|e| CliError::Runtime(e.into()))?;
            let meta = checkpoint_meta(&a.manifest, json!({ "condition": cond.id(), "seed": seed }));
            t.checkpoint(&meta).save(&path).context("saving checkpoint")?;
            log::info!("{} seed {seed}: trained in {:.1}s", cond.id(), started.elapsed().as_secs_f64());
        }
    }
    let checkpoints = load_checkpoints(&dir, &suite)?;
    let report = run_ablation_suite(&suite, &tasks, &checkpoints).context("evaluating")?;
    write_report(&report, &a.out)
}

fn cmd_replay(a: ReplayArgs) -> Result<(), CliError> {
    let traj = Trajectory::load(&a.trajectory).map_err(|e| usage(format!("{}: {e}", a.trajectory.display())))?;
    match replay(&traj) {
        Ok(hashes) => {
            if a.hashes {
                for h in &hashes {
                    println!("{h:016x}");
                }
            }
            println!("replayed {} ticks; all frame hashes match", hashes.len());
            Ok(())
        }
        Err(e) => Err(CliError::Runtime(anyhow!("replay diverged: {e}"))),
    }
}

fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    let text = read_text(&a.input)?;
    let stored = EvalReport::from_json(&text).map_err(|e| usage(format!("{}: {e}", a.input.display())))?;
    let report = stored.rebuild();
    if report != stored {
        log::warn!("statistics recomputed from stored outcomes differ from the stored report");
    }
    write_report(&report, &a.out)
}

fn cmd_registry(a: RegistryArgs) -> Result<(), CliError> {
    let tasks = a.tasks.tasks()?;
    if let Some(p) = &a.out {
        std::fs::write(p, registry_to_toml(&tasks)).with_context(|| format!("writing {}", p.display()))?;
        return Ok(());
    }
    for t in &tasks {
        println!("{:<48} {}", t.task_id, t.instruction);
    }
    if tasks.is_empty() {
        return Err(usage("no tasks selected"));
    }
    Ok(())
}
