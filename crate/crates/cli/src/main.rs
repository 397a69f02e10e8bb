//! `lifecycle`: command-line front end for collection, deployment, the
//! exact oracle, the experiment report, the toy flow-matching policy and
//! the tool-bus server.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lifecycle_core::collector::{collect_pairs, CollectConfig, Dataset};
use lifecycle_core::events::EventLog;
use lifecycle_core::fmpolicy::{
    evaluate, expert_dataset, write_field, PlanarConfig, PlanarTask, TrainConfig,
};
use lifecycle_core::harness::{
    markov_success, render_svg, render_text, run_experiment, ChainParams, ExperimentConfig,
};
use lifecycle_core::policypool::DEFAULT_SEED_DEMOS;
use lifecycle_core::toolbus::serve;
use lifecycle_core::util::episode_rng;
use lifecycle_core::{
    deploy, standard_registry, DeployConfig, HumanConfig, PolicyPool, RobotRuntime, Scenario,
    TaskPlan,
};

#[derive(Parser)]
#[command(
    name = "lifecycle",
    version,
    about = "Agentic robot lifecycle simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect forward/inverse pairs for one subtask into a JSONL dataset.
    Collect(CollectArgs),
    /// Monte-Carlo deployment of a task plan.
    Deploy(DeployArgs),
    /// Exact task success of a chain description.
    Oracle {
        /// JSON file with `{"subtasks": [...]}`.
        #[arg(long)]
        params: PathBuf,
    },
    /// Full experiment: learning curves, long-horizon comparison, effort.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Directory for metrics.json, metrics.txt and figure.svg.
        #[arg(long)]
        out: PathBuf,
        /// Skip the SVG figure.
        #[arg(long)]
        no_svg: bool,
    },
    /// Train and evaluate the planar flow-matching policy.
    Fm(FmArgs),
    /// Serve the standard tools over stdio or a Unix socket.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    policies: PathBuf,
    /// Demonstrations each policy starts from.
    #[arg(long, default_value_t = DEFAULT_SEED_DEMOS)]
    seed_demos: u64,
}

impl SceneArgs {
    fn load(&self) -> Result<(Scenario, PolicyPool)> {
        let scenario = Scenario::load(&self.scenario)
            .with_context(|| format!("loading {}", self.scenario.display()))?;
        let pool = PolicyPool::load(&self.policies, self.seed_demos)
            .with_context(|| format!("loading {}", self.policies.display()))?;
        pool.check_against(&scenario)?;
        Ok((scenario, pool))
    }
}

#[derive(Args)]
struct CollectArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    subtask: String,
    #[arg(long, default_value_t = 100)]
    pairs: usize,
    /// Forward counters start at 50 times this iteration.
    #[arg(long)]
    iteration: Option<u64>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Maximum policy starts before giving up.
    #[arg(long, default_value_t = u64::MAX)]
    budget: u64,
    /// Dataset file, created or appended to.
    #[arg(long)]
    dataset: PathBuf,
    /// Optional JSONL event log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct DeployArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    iteration: Option<u64>,
    #[arg(long, default_value_t = 10_000)]
    episodes: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Single attempt per subtask, no recovery and no operator.
    #[arg(long)]
    baseline: bool,
    /// Disable the operator.
    #[arg(long)]
    no_human: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FmArgs {
    #[arg(long, default_value_t = 200)]
    demos: u64,
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Write the trained field here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Listen on this Unix socket instead of stdio.
    #[arg(long)]
    socket: Option<PathBuf>,
}

fn write_json(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run_collect(a: &CollectArgs) -> Result<()> {
    let (scenario, mut pool) = a.scene.load()?;
    if let Some(i) = a.iteration {
        pool.set_iteration(i);
    }
    let dataset = if a.dataset.exists() {
        Dataset::open(&a.dataset)?
    } else {
        Dataset::create(&a.dataset)?
    };
    let cfg = CollectConfig {
        subtask_id: a.subtask.clone(),
        n_pairs: a.pairs,
        budget: a.budget,
        seed: a.seed,
        episode: 0,
        human: HumanConfig::unlimited(),
    };
    let log = if a.log.is_some() {
        EventLog::new()
    } else {
        EventLog::digest_only()
    };
    let run = collect_pairs(Arc::new(scenario), pool, dataset, &cfg, log)?;
    if let Some(p) = &a.log {
        fs::write(p, run.log.to_jsonl()).with_context(|| format!("writing {}", p.display()))?;
    }
    let summary = serde_json::json!({
        "subtask_id": a.subtask,
        "pairs": run.pairs.len(),
        "attempts": run.attempts,
        "interventions": run.interventions,
        "records": run.dataset.record_count(),
        "log_digest": run.log.digest(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn run_deploy(a: &DeployArgs) -> Result<()> {
    let (scenario, pool) = a.scene.load()?;
    let mut plan = TaskPlan::load(&a.plan)?;
    let mut human = HumanConfig::single_retry();
    if a.baseline {
        plan = plan.without_retries();
        human = HumanConfig::disabled();
    }
    if a.no_human {
        human = HumanConfig::disabled();
    }
    plan.validate(&scenario, &pool)?;
    let cfg = DeployConfig {
        episodes: a.episodes,
        seed: a.seed,
        human,
        iteration: a.iteration,
    };
    let report = deploy(&Arc::new(scenario), &pool, &plan, &cfg)?;
    write_json(
        a.out.as_deref(),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )
}

fn run_oracle(params: &Path) -> Result<()> {
    let text =
        fs::read_to_string(params).with_context(|| format!("reading {}", params.display()))?;
    let p = ChainParams::from_json(&text)?;
    let per: Vec<f64> = p.subtasks.iter().map(|s| s.success()).collect();
    let out = serde_json::json!({"success": markov_success(&p)?, "per_subtask": per});
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run_report(config: &Path, seed: u64, out: &Path, no_svg: bool) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let report = run_experiment(&cfg, seed)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.json"), report.to_json())?;
    let text = render_text(&report);
    fs::write(out.join("metrics.txt"), &text)?;
    if !no_svg {
        fs::write(out.join("figure.svg"), render_svg(&report))?;
    }
    print!("{text}");
    Ok(())
}

fn run_fm(a: &FmArgs) -> Result<()> {
    if a.demos == 0 {
        bail!("--demos must be positive");
    }
    let cfg = PlanarConfig::default();
    let demos = expert_dataset(&cfg, a.demos, a.seed);
    let train_cfg = TrainConfig {
        steps: a.steps,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (task, result) = PlanarTask::fit(&demos, cfg, &train_cfg)?;
    let report = evaluate(&task, a.episodes, a.seed.wrapping_add(1))?;
    if let Some(p) = &a.out {
        write_field(BufWriter::new(File::create(p)?), &task.field, cfg.h)?;
    }
    let tail = &result.loss_history[result.loss_history.len().saturating_sub(200)..];
    let out = serde_json::json!({
        "chunks": demos.len(),
        "final_loss": tail.iter().sum::<f64>() / tail.len().max(1) as f64,
        "evaluation": report,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run_serve(a: &ServeArgs) -> Result<()> {
    let (scenario, pool) = a.scene.load()?;
    let scenario = Arc::new(scenario);
    let registry = standard_registry();
    let mut runtime = RobotRuntime::new(
        scenario.clone(),
        pool,
        scenario.initial_state(),
        episode_rng(a.seed, 0),
        HumanConfig::unlimited(),
    );
    match &a.socket {
        None => {
            let stdin = io::stdin();
            serve(&registry, &mut runtime, stdin.lock(), io::stdout().lock())?;
        }
        Some(path) => serve_socket(&registry, &mut runtime, path)?,
    }
    Ok(())
}

#[cfg(unix)]
fn serve_socket(
    registry: &lifecycle_core::toolbus::Registry<RobotRuntime>,
    runtime: &mut RobotRuntime,
    path: &Path,
) -> Result<()> {
    use std::os::unix::net::UnixListener;
    let listener =
        UnixListener::bind(path).with_context(|| format!("binding {}", path.display()))?;
    for stream in listener.incoming() {
        let stream = stream?;
        serve(
            registry,
            runtime,
            BufReader::new(stream.try_clone()?),
            stream,
        )?;
    }
    Ok(())
}

#[cfg(not(unix))]
fn serve_socket(
    _: &lifecycle_core::toolbus::Registry<RobotRuntime>,
    _: &mut RobotRuntime,
    _: &Path,
) -> Result<()> {
    bail!("Unix sockets are not available on this platform")
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Collect(a) => run_collect(&a),
        Command::Deploy(a) => run_deploy(&a),
        Command::Oracle { params } => run_oracle(&params),
        Command::Report {
            config,
            seed,
            out,
            no_svg,
        } => run_report(&config, seed, &out, no_svg),
        Command::Fm(a) => run_fm(&a),
        Command::Serve(a) => run_serve(&a),
    }
}
