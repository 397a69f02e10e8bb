//! Deployment: run a fixed-order plan of subtasks with monitoring, retry,
//! recovery and escalation, then feed the trajectories back into the dataset.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agentcore::{
    classify_failure, instruction_for, retry_policy, Action, FailureClass, FailureResponse,
    PlannerEntry, ScriptedPlanner,
};
use crate::collector::{counts_toward_learning, Dataset, DatasetError, DatasetRecord, Trajectory};
use crate::events::{EventKind, EventLog};
use crate::memory::{AgentMode, MemoryError, MemoryState, SubtaskStatus, TaskMemory};
use crate::policypool::{PolicyPool, PoolError};
use crate::runtime::{standard_registry, AgentSession, HumanConfig, RobotRuntime};
use crate::simenv::{in_precondition, Direction, Outcome, Scenario, SimError};
use crate::toolbus::{Registry, HUMAN_UNAVAILABLE};
use crate::util::episode_rng;

pub use crate::events::{Event, EventKind as LogEventKind};

/// Upper bound on decisions per episode; a guard against planner loops.
const MAX_DECISIONS: usize = 10_000;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

fn default_max_attempts() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub subtasks: Vec<String>,
    #[serde(default = "default_max_attempts")]
    pub default_max_attempts: u32,
    #[serde(default)]
    pub max_attempts: BTreeMap<String, u32>,
    #[serde(default)]
    pub recovery_map: BTreeMap<String, String>,
}

/// One subtask's view of the plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanEntry {
    pub subtask_id: String,
    pub max_attempts: u32,
    pub recovery: Option<String>,
}

impl TaskPlan {
    pub fn new(subtasks: Vec<String>) -> Self {
        Self {
            subtasks,
            default_max_attempts: default_max_attempts(),
            max_attempts: BTreeMap::new(),
            recovery_map: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, OrchestratorError> {
        serde_json::from_str(text).map_err(|e| OrchestratorError::Plan(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OrchestratorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| OrchestratorError::Plan(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn max_attempts_for(&self, subtask_id: &str) -> u32 {
        self.max_attempts
            .get(subtask_id)
            .copied()
            .unwrap_or(self.default_max_attempts)
    }

    pub fn entry(&self, subtask_id: &str) -> Option<PlanEntry> {
        self.subtasks
            .iter()
            .any(|s| s == subtask_id)
            .then(|| PlanEntry {
                subtask_id: subtask_id.to_string(),
                max_attempts: self.max_attempts_for(subtask_id),
                recovery: self.recovery_map.get(subtask_id).cloned(),
            })
    }

    /// Single attempt per subtask, no recovery.
    pub fn without_retries(&self) -> Self {
        Self {
            subtasks: self.subtasks.clone(),
            default_max_attempts: 1,
            max_attempts: BTreeMap::new(),
            recovery_map: BTreeMap::new(),
        }
    }

    pub fn validate(
        &self,
        scenario: &Scenario,
        pool: &PolicyPool,
    ) -> Result<(), OrchestratorError> {
        if self.subtasks.is_empty() {
            return Err(OrchestratorError::Plan("plan has no subtasks".into()));
        }
        for id in &self.subtasks {
            scenario.require(id)?;
            if self.max_attempts_for(id) == 0 {
                return Err(OrchestratorError::Plan(format!(
                    "max_attempts for `{id}` must be at least 1"
                )));
            }
            if pool.find(id, Direction::Forward).is_none() {
                return Err(OrchestratorError::Plan(format!(
                    "no forward policy for `{id}`"
                )));
            }
        }
        for (id, rec) in &self.recovery_map {
            let spec = pool.spec(rec)?;
            if &spec.subtask_id != id {
                return Err(OrchestratorError::Plan(format!(
                    "recovery `{rec}` does not belong to `{id}`"
                )));
            }
        }
        Ok(())
    }

    pub fn planner(
        &self,
        scenario: Arc<Scenario>,
        pool: &PolicyPool,
    ) -> Result<ScriptedPlanner, OrchestratorError> {
        self.validate(&scenario, pool)?;
        let mut entries = BTreeMap::new();
        for id in &self.subtasks {
            let e = self.entry(id).expect("subtask is in the plan");
            entries.insert(
                id.clone(),
                PlannerEntry {
                    subtask_id: id.clone(),
                    direction: Direction::Forward,
                    policy_id: pool
                        .find(id, Direction::Forward)
                        .expect("validated")
                        .policy_id
                        .clone(),
                    max_attempts: e.max_attempts,
                    recovery: e.recovery,
                },
            );
        }
        Ok(ScriptedPlanner::new(scenario, entries)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Next {
    Subtask(String),
    Done,
}

/// First non-terminal subtask in plan order.
pub fn schedule_next(plan: &TaskPlan, task: &TaskMemory) -> Next {
    plan.subtasks
        .iter()
        .find(|id| task.status(id).is_some_and(|s| !s.is_terminal()))
        .map_or(Next::Done, |id| Next::Subtask(id.clone()))
}

/// Retry, recover or escalate after a failed attempt. `attempts` counts the
/// attempts made so far, this one included.
pub fn handle_failure(outcome: &Outcome, attempts: u32, entry: &PlanEntry) -> FailureResponse {
    let class = outcome.failure_class.unwrap_or(FailureClass::Degrading);
    retry_policy(
        class,
        attempts,
        entry.max_attempts,
        entry.recovery.is_some(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskStatus {
    Completed,
    CompletedWithHuman,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskResult {
    pub status: TaskStatus,
    pub subtasks: BTreeMap<String, SubtaskStatus>,
    pub interventions: u64,
    pub wall_ticks: u64,
    pub forward_invocations: u64,
    pub recoveries: u64,
}

impl TaskResult {
    pub fn succeeded(&self) -> bool {
        self.status != TaskStatus::Aborted
    }
}

/// Runs `plan` to completion or abort in an already set-up session.
///
/// After every attempt and every human intervention the agent queries
/// `env_summary` and `fetch_robot_stats` before deciding again.
pub fn execute_task(
    session: &mut AgentSession<'_>,
    planner: &ScriptedPlanner,
    plan: &TaskPlan,
) -> Result<TaskResult, OrchestratorError> {
    let scenario = planner.scenario().clone();
    let subtasks: Vec<(String, String)> = plan
        .subtasks
        .iter()
        .map(|id| Ok((id.clone(), scenario.require(id)?.forward_text.clone())))
        .collect::<Result<_, SimError>>()?;
    session.memory.task = TaskMemory::new("deploy", plan.subtasks.join(" -> "), subtasks);
    let mut interventions = 0u64;
    let mut forward_invocations = 0u64;
    let mut recoveries = 0u64;
    let mut aborted = false;
    let mut obs = session.observe();

    for _ in 0..MAX_DECISIONS {
        let decision = session.decide(planner, &obs);
        let Some(z) = decision.chosen_subtask.clone() else {
            break;
        };
        let entry = planner
            .entry(&z)
            .expect("planner decides on plan subtasks")
            .clone();
        let st = scenario.require(&z)?.clone();
        let run = match decision.action {
            Action::Finish => break,
            Action::MarkDone => {
                session.memory.task.transition(&z, SubtaskStatus::Done)?;
                None
            }
            Action::InvokePolicy {
                policy_id,
                instruction,
            } => {
                session.memory.task.transition(&z, SubtaskStatus::Active)?;
                Some((policy_id, instruction))
            }
            Action::Retry => {
                session.memory.task.transition(&z, SubtaskStatus::Failed)?;
                session.memory.task.transition(&z, SubtaskStatus::Active)?;
                let instr = instruction_for(&scenario, &z, Direction::Forward)
                    .expect("plan subtask exists");
                Some((entry.policy_id.clone(), instr))
            }
            Action::Recover { policy_id } => {
                debug_assert!(!in_precondition(
                    &obs.env_summary.structured,
                    &st,
                    Direction::Forward
                ));
                let instr = instruction_for(&scenario, &z, Direction::Recovery)
                    .expect("plan subtask exists");
                Some((policy_id, instr))
            }
            Action::Escalate => {
                match session.call(
                    "call_human",
                    json!({"reason": decision.trace.assessment, "subtask_id": z}),
                ) {
                    Ok(r) => {
                        interventions += 1;
                        let tick = session.tick();
                        session.log.push(
                            tick,
                            EventKind::Intervention,
                            &json!({"subtask_id": z, "restored": r["restored"]}),
                        );
                        obs = session.observe();
                    }
                    Err(e) => {
                        debug_assert_eq!(e.code, HUMAN_UNAVAILABLE);
                        session
                            .memory
                            .task
                            .transition(&z, SubtaskStatus::Escalated)?;
                        aborted = true;
                        break;
                    }
                }
                None
            }
        };
        let Some((policy_id, instruction)) = run else {
            continue;
        };
        let spec = session.runtime().pool.spec(&policy_id)?.clone();
        match spec.direction {
            Direction::Forward => forward_invocations += 1,
            _ => recoveries += 1,
        }
        let before = obs.env_summary.structured.clone();
        let result = session.start_policy(&policy_id, &instruction);
        if result.is_err() {
            let _ = session.call("terminate_policy", Value::Null);
        }
        obs = session.observe();
        let (kind, steps) = match &result {
            Ok(r) => {
                let o: Outcome = serde_json::from_value(r["outcome"].clone())
                    .expect("start_policy returns an outcome");
                (o.kind, o.steps_taken)
            }
            Err(_) => (crate::simenv::OutcomeKind::Failure, 0),
        };
        let class = (kind == crate::simenv::OutcomeKind::Failure)
            .then(|| classify_failure(&before, &obs.env_summary.structured, &st, &spec));
        let tick = session.tick();
        session.log.push(
            tick,
            EventKind::Outcome,
            &json!({
                "policy_id": policy_id,
                "direction": spec.direction,
                "kind": kind,
                "failure_class": class,
                "steps": steps,
            }),
        );
    }

    let task = &session.memory.task;
    let all_done = task
        .subtasks
        .iter()
        .all(|s| s.status == SubtaskStatus::Done);
    let status = match (aborted || !all_done, interventions) {
        (true, _) => TaskStatus::Aborted,
        (false, 0) => TaskStatus::Completed,
        (false, _) => TaskStatus::CompletedWithHuman,
    };
    Ok(TaskResult {
        status,
        subtasks: task
            .subtasks
            .iter()
            .map(|s| (s.subtask_id.clone(), s.status))
            .collect(),
        interventions,
        wall_ticks: session.tick(),
        forward_invocations,
        recoveries,
    })
}

/// One independent deployment episode.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    registry: &Registry<RobotRuntime>,
    scenario: &Arc<Scenario>,
    pool: &PolicyPool,
    plan: &TaskPlan,
    planner: &ScriptedPlanner,
    human: &HumanConfig,
    seed: u64,
    episode: u64,
    log: EventLog,
) -> Result<(TaskResult, EventLog, RobotRuntime), OrchestratorError> {
    let mut pool = pool.clone();
    pool.set_episode(episode);
    let runtime = RobotRuntime::new(
        scenario.clone(),
        pool,
        scenario.initial_state(),
        episode_rng(seed, episode),
        human.clone(),
    );
    let memory = MemoryState::new(
        AgentMode::TaskExecutor,
        TaskMemory::new("deploy", "", vec![]),
    );
    let mut session = AgentSession::new(registry, runtime, memory, log);
    let result = execute_task(&mut session, planner, plan)?;
    let (runtime, _, log) = session.into_parts();
    Ok((result, log, runtime))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployConfig {
    pub episodes: u64,
    pub seed: u64,
    pub human: HumanConfig,
    /// Puts every forward policy at `n = 50 * iteration` first.
    pub iteration: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployReport {
    pub episodes: u64,
    pub seed: u64,
    pub iteration: Option<u64>,
    pub completed: u64,
    pub completed_with_human: u64,
    pub aborted: u64,
    pub successes: u64,
    pub success_rate: f64,
    pub interventions: u64,
    pub recoveries: u64,
    pub forward_invocations: u64,
    pub mean_wall_ticks: f64,
    /// SHA-256 over the episode log digests in episode order.
    pub digest: String,
}

struct EpisodeSummary {
    status: TaskStatus,
    interventions: u64,
    recoveries: u64,
    forward_invocations: u64,
    wall_ticks: u64,
    digest: String,
}

/// Monte-Carlo deployment over independent seeded episodes, in parallel.
/// The report does not depend on the number of worker threads.
pub fn deploy(
    scenario: &Arc<Scenario>,
    pool: &PolicyPool,
    plan: &TaskPlan,
    config: &DeployConfig,
) -> Result<DeployReport, OrchestratorError> {
    let mut pool = pool.clone();
    if let Some(i) = config.iteration {
        pool.set_iteration(i);
    }
    let planner = plan.planner(scenario.clone(), &pool)?;
    let registry = standard_registry();
    let summaries: Vec<EpisodeSummary> = (0..config.episodes)
        .into_par_iter()
        .map(|i| {
            let (r, log, _) = run_episode(
                &registry,
                scenario,
                &pool,
                plan,
                &planner,
                &config.human,
                config.seed,
                i,
                EventLog::digest_only(),
            )?;
            Ok(EpisodeSummary {
                status: r.status,
                interventions: r.interventions,
                recoveries: r.recoveries,
                forward_invocations: r.forward_invocations,
                wall_ticks: r.wall_ticks,
                digest: log.digest(),
            })
        })
        .collect::<Result<_, OrchestratorError>>()?;
    let mut h = Sha256::new();
    let mut report = DeployReport {
        episodes: config.episodes,
        seed: config.seed,
        iteration: config.iteration,
        completed: 0,
        completed_with_human: 0,
        aborted: 0,
        successes: 0,
        success_rate: 0.0,
        interventions: 0,
        recoveries: 0,
        forward_invocations: 0,
        mean_wall_ticks: 0.0,
        digest: String::new(),
    };
    let mut ticks = 0u64;
    for s in &summaries {
        match s.status {
            TaskStatus::Completed => report.completed += 1,
            TaskStatus::CompletedWithHuman => report.completed_with_human += 1,
            TaskStatus::Aborted => report.aborted += 1,
        }
        report.interventions += s.interventions;
        report.recoveries += s.recoveries;
        report.forward_invocations += s.forward_invocations;
        ticks += s.wall_ticks;
        h.update(s.digest.as_bytes());
    }
    report.successes = report.completed + report.completed_with_human;
    if config.episodes > 0 {
        report.success_rate = report.successes as f64 / config.episodes as f64;
        report.mean_wall_ticks = ticks as f64 / config.episodes as f64;
    }
    report.digest = hex::encode(h.finalize());
    Ok(report)
}

/// Appends every trajectory produced during deployment (policy runs and
/// human corrections) to `dataset`, advancing `pool`'s learning counters
/// for the ones that count. Passing the same log twice appends twice.
pub fn reintegrate(
    log: &EventLog,
    dataset: &mut Dataset,
    mut pool: Option<&mut PolicyPool>,
) -> Result<usize, DatasetError> {
    let mut appended = 0;
    for e in log.events().filter(|e| e.kind == EventKind::ToolCall) {
        let name = &e.payload["request"]["params"]["name"];
        if name != "start_policy" && name != "change_policy" && name != "call_human" {
            continue;
        }
        let Some(t) = e.payload["response"]["result"].get("trajectory") else {
            continue;
        };
        let t: Trajectory = serde_json::from_value(t.clone())
            .map_err(|err| DatasetError::Record(err.to_string()))?;
        if counts_toward_learning(&t) {
            if let Some(p) = pool.as_deref_mut() {
                p.record_trajectory(&t.policy_id);
            }
        }
        dataset.append(&DatasetRecord::Trajectory(t))?;
        appended += 1;
    }
    Ok(appended)
}
