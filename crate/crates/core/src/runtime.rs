//! Robot-side tool server and the agent-side session that talks to it.
//!
//! [`RobotRuntime`] owns the simulated scene, the policy pool, the episode
//! RNG, the scripted human and the dataset sink. [`standard_registry`]
//! exposes it through the seven standard tools. [`AgentSession`] is the
//! agent's end of the bus: every call is framed, logged in the
//! [`EventLog`] and summarized in working memory.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::agentcore::{
    instruction_for, interventions_key, Action, BackendError, CoTTrace, Decision, DecisionBackend,
    Instruction, InstructionDirection, Observation, STAT_INTERVENTIONS, STAT_LAST_ACTOR,
    STAT_LAST_OUTCOME, STAT_POLICY_ACTIVE, STAT_STEPS_EXECUTED,
};
use crate::collector::{
    counts_toward_learning, Dataset, DatasetRecord, Trajectory, TrajectoryDirection,
};
use crate::events::{EventKind, EventLog};
use crate::memory::MemoryState;
use crate::policypool::{synth_steps, PolicyPool, PoolError};
use crate::simenv::{
    human_restore, summarize, Direction, EnvState, EnvSummary, Outcome, Scenario, SimError,
};
use crate::toolbus::Loopback;
use crate::toolbus::{
    decode_response, encode_request, ArgType, Registry, ToolDescriptor, ToolError, ToolRequest,
    Transport, ENV_VIOLATION, HUMAN_UNAVAILABLE, INVALID_PARAMS, METHOD_NOT_FOUND,
    POLICY_NOT_ACTIVE,
};
use crate::util::{fnv1a64, hex64, EpisodeRng};

/// JSON-RPC internal error, used for dataset I/O failures.
pub const INTERNAL_ERROR: i64 = -32603;

/// Scripted operator. Always restores the precondition it is asked for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanConfig {
    pub enabled: bool,
    /// Interventions allowed per subtask; `None` is unlimited.
    pub budget_per_subtask: Option<u32>,
    #[serde(default)]
    pub budget_overrides: BTreeMap<String, u32>,
    /// Clock ticks one intervention takes.
    pub steps: u32,
}

impl HumanConfig {
    pub fn unlimited() -> Self {
        Self {
            enabled: true,
            budget_per_subtask: None,
            budget_overrides: BTreeMap::new(),
            steps: 4,
        }
    }

    /// One human-assisted retry per subtask.
    pub fn single_retry() -> Self {
        Self {
            budget_per_subtask: Some(1),
            ..Self::unlimited()
        }
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::unlimited()
        }
    }

    fn budget(&self, subtask_id: &str) -> Option<u32> {
        self.budget_overrides
            .get(subtask_id)
            .copied()
            .or(self.budget_per_subtask)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotStats {
    pub steps_executed: u64,
    pub last_outcome: u8,
    pub last_actor: u8,
    pub interventions: BTreeMap<String, u64>,
}

impl RobotStats {
    fn to_map(&self, policy_active: bool) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert(STAT_POLICY_ACTIVE.into(), u8::from(policy_active).into());
        m.insert(STAT_STEPS_EXECUTED.into(), self.steps_executed.into());
        m.insert(STAT_LAST_OUTCOME.into(), self.last_outcome.into());
        m.insert(STAT_LAST_ACTOR.into(), self.last_actor.into());
        m.insert(
            STAT_INTERVENTIONS.into(),
            self.interventions.values().sum::<u64>().into(),
        );
        for (k, v) in &self.interventions {
            m.insert(interventions_key(k), (*v).into());
        }
        m
    }
}

fn actor_code(direction: Direction) -> u8 {
    match direction {
        Direction::Forward => 0,
        Direction::Inverse => 1,
        Direction::Recovery => 2,
    }
}

#[derive(Debug, Clone)]
struct LastFailure {
    policy_id: String,
    subtask_id: String,
    direction: Direction,
}

/// Everything on the robot side of the bus for one episode.
pub struct RobotRuntime {
    pub scenario: Arc<Scenario>,
    pub env: EnvState,
    pub pool: PolicyPool,
    pub rng: EpisodeRng,
    pub human: HumanConfig,
    pub dataset: Dataset,
    pub stats: RobotStats,
    last_failure: Option<LastFailure>,
}

impl RobotRuntime {
    pub fn new(
        scenario: Arc<Scenario>,
        pool: PolicyPool,
        env: EnvState,
        rng: EpisodeRng,
        human: HumanConfig,
    ) -> Self {
        Self {
            scenario,
            env,
            pool,
            rng,
            human,
            dataset: Dataset::null(),
            stats: RobotStats::default(),
            last_failure: None,
        }
    }

    pub fn with_dataset(mut self, dataset: Dataset) -> Self {
        self.dataset = dataset;
        self
    }

    fn run_active(&mut self, handle_id: u64) -> Result<Map<String, Value>, ToolError> {
        let ex = match self
            .pool
            .execute(handle_id, &mut self.env, &self.scenario, &mut self.rng)
        {
            Ok(ex) => ex,
            Err(e) => {
                if let PoolError::Sim(SimError::Precondition { .. }) = e {
                    // The attempt counts as a failure that never moved the robot.
                    if let Some(h) = self.pool.handle(handle_id) {
                        let spec = self.pool.spec(&h.policy_id).map_err(pool_error)?;
                        self.stats.last_actor = actor_code(spec.direction);
                        self.stats.last_outcome = 2;
                        self.last_failure = Some(LastFailure {
                            policy_id: spec.policy_id.clone(),
                            subtask_id: spec.subtask_id.clone(),
                            direction: spec.direction,
                        });
                    }
                }
                return Err(pool_error(e));
            }
        };
        let spec = self
            .pool
            .spec(&ex.trajectory.policy_id)
            .map_err(pool_error)?;
        self.stats.steps_executed += u64::from(ex.outcome.steps_taken);
        self.stats.last_actor = actor_code(spec.direction);
        self.stats.last_outcome = if ex.outcome.is_success() { 1 } else { 2 };
        self.last_failure = (!ex.outcome.is_success()).then(|| LastFailure {
            policy_id: spec.policy_id.clone(),
            subtask_id: spec.subtask_id.clone(),
            direction: spec.direction,
        });
        let mut m = Map::new();
        m.insert("handle_id".into(), handle_id.into());
        m.insert("outcome".into(), to_value(&ex.outcome));
        m.insert("trajectory".into(), to_value(&ex.trajectory));
        m.insert("tick".into(), self.env.tick.into());
        Ok(m)
    }

    fn instruction_arg(
        &self,
        policy_id: &str,
        args: &Map<String, Value>,
    ) -> Result<Instruction, ToolError> {
        let spec = self.pool.spec(policy_id).map_err(pool_error)?;
        let text = str_arg(args, "instruction")?;
        if text.trim().is_empty() {
            return Err(ToolError::new(
                INVALID_PARAMS,
                "instruction must not be empty",
            ));
        }
        let expected = match spec.direction {
            Direction::Forward => InstructionDirection::Forward,
            Direction::Inverse | Direction::Recovery => InstructionDirection::Inverse,
        };
        if let Some(d) = args.get("direction") {
            let given: InstructionDirection = serde_json::from_value(d.clone()).map_err(|_| {
                ToolError::new(
                    INVALID_PARAMS,
                    "direction must be \"Forward\" or \"Inverse\"",
                )
            })?;
            if given != expected {
                return Err(ToolError::new(
                    INVALID_PARAMS,
                    format!("`{policy_id}` runs {expected:?}, not {given:?}"),
                ));
            }
        }
        Ok(Instruction {
            text: text.to_string(),
            subtask_id: spec.subtask_id.clone(),
            direction: expected,
        })
    }

    fn start_policy(&mut self, args: &Map<String, Value>) -> Result<Map<String, Value>, ToolError> {
        let policy_id = str_arg(args, "policy_id")?;
        let instruction = self.instruction_arg(policy_id, args)?;
        let handle = self
            .pool
            .start(policy_id, instruction)
            .map_err(pool_error)?;
        self.run_active(handle.handle_id)
    }

    fn change_policy(
        &mut self,
        args: &Map<String, Value>,
    ) -> Result<Map<String, Value>, ToolError> {
        let active = self
            .pool
            .active()
            .map(|h| h.handle_id)
            .ok_or_else(|| ToolError::new(POLICY_NOT_ACTIVE, "no active policy to change"))?;
        let policy_id = str_arg(args, "policy_id")?;
        let instruction = self.instruction_arg(policy_id, args)?;
        let handle = self
            .pool
            .change(active, policy_id, instruction)
            .map_err(pool_error)?;
        self.run_active(handle.handle_id)
    }

    fn terminate_policy(&mut self) -> Result<Map<String, Value>, ToolError> {
        let id =
            self.pool.active().map(|h| h.handle_id).ok_or_else(|| {
                ToolError::new(POLICY_NOT_ACTIVE, "no active policy to terminate")
            })?;
        self.pool.terminate(id).map_err(pool_error)?;
        let mut m = Map::new();
        m.insert("handle_id".into(), id.into());
        Ok(m)
    }

    fn call_human(&mut self, args: &Map<String, Value>) -> Result<Map<String, Value>, ToolError> {
        let subtask_id = str_arg(args, "subtask_id")?;
        let subtask = self
            .scenario
            .subtask(subtask_id)
            .ok_or_else(|| {
                ToolError::new(INVALID_PARAMS, format!("unknown subtask `{subtask_id}`"))
            })?
            .clone();
        if !self.human.enabled {
            return Err(ToolError::new(HUMAN_UNAVAILABLE, "no operator available"));
        }
        let used = self
            .stats
            .interventions
            .get(subtask_id)
            .copied()
            .unwrap_or(0);
        if self
            .human
            .budget(subtask_id)
            .is_some_and(|b| used >= u64::from(b))
        {
            return Err(ToolError::new(
                HUMAN_UNAVAILABLE,
                format!("intervention budget for `{subtask_id}` used up"),
            ));
        }
        let failure = self
            .last_failure
            .take()
            .filter(|f| f.subtask_id == subtask_id);
        let restore = match &failure {
            Some(f) if f.direction == Direction::Inverse => Direction::Inverse,
            _ => Direction::Forward,
        };
        let failed_dir = failure.as_ref().map_or(Direction::Forward, |f| f.direction);
        let policy_id = match &failure {
            Some(f) => f.policy_id.clone(),
            None => self
                .pool
                .find(subtask_id, Direction::Forward)
                .map_or_else(|| "human".to_string(), |p| p.policy_id.clone()),
        };
        if let Some(h) = self.pool.active().map(|h| h.handle_id) {
            self.pool.terminate(h).map_err(pool_error)?;
        }
        let before = self.env.clone();
        let mut after = human_restore(&before, &self.scenario, &subtask, restore);
        let steps = self.human.steps.max(1);
        after.tick += u64::from(steps);
        self.env = after;
        let instruction = instruction_for(&self.scenario, subtask_id, failed_dir)
            .map_err(|e| ToolError::new(INVALID_PARAMS, e.to_string()))?;
        let trajectory = Trajectory {
            trajectory_id: self.pool.next_trajectory_id(),
            policy_id,
            direction: TrajectoryDirection::Human,
            instruction,
            steps: synth_steps(&before, "human", steps),
            outcome: Outcome::success(steps),
            episode: self.pool.episode(),
            ext: None,
        };
        *self
            .stats
            .interventions
            .entry(subtask_id.to_string())
            .or_insert(0) += 1;
        self.stats.last_actor = 3;
        self.stats.last_outcome = 1;
        let mut m = Map::new();
        m.insert("restored".into(), to_value(&restore));
        m.insert("trajectory".into(), to_value(&trajectory));
        m.insert(
            "interventions".into(),
            self.stats.interventions[subtask_id].into(),
        );
        m.insert(
            "reason".into(),
            args.get("reason").cloned().unwrap_or(Value::Null),
        );
        Ok(m)
    }

    fn append_trajectory(
        &mut self,
        args: &Map<String, Value>,
    ) -> Result<Map<String, Value>, ToolError> {
        let record = DatasetRecord::from_value(args["trajectory"].clone())
            .map_err(|e| ToolError::new(INVALID_PARAMS, e.to_string()))?;
        let offset = self
            .dataset
            .append(&record)
            .map_err(|e| ToolError::new(INTERNAL_ERROR, e.to_string()))?;
        if let DatasetRecord::Trajectory(t) = &record {
            if counts_toward_learning(t) {
                self.pool.record_trajectory(&t.policy_id);
            }
        }
        let mut m = Map::new();
        m.insert("offset".into(), offset.into());
        m.insert("record_count".into(), self.dataset.record_count().into());
        Ok(m)
    }
}

fn to_value<T: Serialize + ?Sized>(v: &T) -> Value {
    serde_json::to_value(v).expect("runtime values serialize")
}

fn str_arg<'a>(args: &'a Map<String, Value>, key: &str) -> Result<&'a str, ToolError> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| ToolError::new(INVALID_PARAMS, format!("missing string `{key}`")))
}

fn pool_error(e: PoolError) -> ToolError {
    match e {
        PoolError::PolicyBusy(h) => ToolError::new(
            POLICY_NOT_ACTIVE,
            format!("policy handle {h} is still active"),
        ),
        PoolError::PolicyNotActive => ToolError::new(POLICY_NOT_ACTIVE, "no active policy handle"),
        PoolError::Sim(SimError::Precondition { subtask, direction }) => ToolError::new(
            ENV_VIOLATION,
            format!("precondition of `{subtask}` ({direction:?}) does not hold"),
        ),
        other => ToolError::new(INVALID_PARAMS, other.to_string()),
    }
}

/// The seven standard tools, bound to a [`RobotRuntime`].
pub fn standard_registry() -> Registry<RobotRuntime> {
    use ArgType::*;
    let mut r = Registry::new();
    let tools: Vec<(ToolDescriptor, crate::toolbus::Handler<RobotRuntime>)> = vec![
        (
            ToolDescriptor::new(
                "start_policy",
                "start a policy with an instruction and run it for one attempt",
                &[
                    ("policy_id", String, true),
                    ("instruction", String, true),
                    ("direction", String, true),
                ],
            ),
            Box::new(|rt: &mut RobotRuntime, a| rt.start_policy(a)),
        ),
        (
            ToolDescriptor::new("terminate_policy", "stop the active policy", &[]),
            Box::new(|rt: &mut RobotRuntime, _| rt.terminate_policy()),
        ),
        (
            ToolDescriptor::new(
                "change_policy",
                "replace the active policy and run the new one",
                &[("policy_id", String, true), ("instruction", String, true)],
            ),
            Box::new(|rt: &mut RobotRuntime, a| rt.change_policy(a)),
        ),
        (
            ToolDescriptor::new(
                "env_summary",
                "structured and textual summary of the scene",
                &[],
            ),
            Box::new(
                |rt: &mut RobotRuntime, _| match to_value(&summarize(&rt.env)) {
                    Value::Object(m) => Ok(m),
                    _ => unreachable!("summaries serialize to objects"),
                },
            ),
        ),
        (
            ToolDescriptor::new("fetch_robot_stats", "execution counters of the robot", &[]),
            Box::new(|rt: &mut RobotRuntime, _| Ok(rt.stats.to_map(rt.pool.active().is_some()))),
        ),
        (
            ToolDescriptor::new(
                "call_human",
                "ask the operator to restore the scene",
                &[("reason", String, true), ("subtask_id", String, true)],
            ),
            Box::new(|rt: &mut RobotRuntime, a| rt.call_human(a)),
        ),
        (
            ToolDescriptor::new(
                "append_trajectory",
                "append a trajectory or pair record to the dataset",
                &[("trajectory", Object, true)],
            ),
            Box::new(|rt: &mut RobotRuntime, a| rt.append_trajectory(a)),
        ),
    ];
    for (d, h) in tools {
        r.register_tool(d, h)
            .expect("standard tool names are unique");
    }
    r
}

/// Result of one tool call as the agent sees it.
pub type CallResult = Result<Map<String, Value>, ToolError>;

/// Agent end of the bus for one episode.
pub struct AgentSession<'r> {
    link: Loopback<'r, RobotRuntime>,
    pub memory: MemoryState,
    pub log: EventLog,
    next_id: u64,
}

impl<'r> AgentSession<'r> {
    pub fn new(
        registry: &'r Registry<RobotRuntime>,
        runtime: RobotRuntime,
        memory: MemoryState,
        log: EventLog,
    ) -> Self {
        Self {
            link: Loopback::new(registry, runtime),
            memory,
            log,
            next_id: 1,
        }
    }

    pub fn runtime(&self) -> &RobotRuntime {
        &self.link.ctx
    }

    pub fn runtime_mut(&mut self) -> &mut RobotRuntime {
        &mut self.link.ctx
    }

    pub fn into_parts(self) -> (RobotRuntime, MemoryState, EventLog) {
        (self.link.into_inner(), self.memory, self.log)
    }

    pub fn tick(&self) -> u64 {
        self.link.ctx.env.tick
    }

    /// Calls `name` over the bus. Tools outside the role's allowed set are
    /// refused locally and never reach the robot.
    pub fn call(&mut self, name: &str, args: Value) -> CallResult {
        if !self.memory.role.allows(name) {
            return Err(ToolError::new(
                METHOD_NOT_FOUND,
                format!("`{name}` is not available to {:?}", self.memory.role.mode),
            ));
        }
        let arguments = match args {
            Value::Object(m) => m,
            Value::Null => Map::new(),
            other => {
                return Err(ToolError::new(
                    INVALID_PARAMS,
                    format!("arguments must be an object, got {other}"),
                ))
            }
        };
        let id = self.next_id;
        self.next_id += 1;
        let req_line = encode_request(&ToolRequest::call(id, name, arguments));
        let resp_line = self
            .link
            .exchange(&req_line)
            .expect("loopback exchange cannot fail");
        let resp = decode_response(&resp_line).expect("server emits canonical responses");
        assert_eq!(resp.id, id, "response pairs with its request");
        let tick = self.tick();
        self.log.push_tool_call(tick, &req_line, &resp_line);
        self.memory.working.record_call(
            name,
            hex64(fnv1a64(&req_line)),
            hex64(fnv1a64(&resp_line)),
            tick,
        );
        resp.into_result()
    }

    /// Queries `env_summary` and `fetch_robot_stats`.
    pub fn observe(&mut self) -> Observation {
        let summary = self
            .call("env_summary", Value::Null)
            .expect("env_summary never fails");
        let env_summary: EnvSummary =
            serde_json::from_value(Value::Object(summary)).expect("env_summary returns a summary");
        let stats = self
            .call("fetch_robot_stats", Value::Null)
            .expect("fetch_robot_stats never fails");
        let robot_stats = stats
            .into_iter()
            .map(|(k, v)| (k, v.as_f64().unwrap_or(0.0)))
            .collect();
        Observation {
            timestamp: env_summary.structured.tick,
            env_summary,
            robot_stats,
        }
    }

    /// Asks `backend` for the next decision and logs it. A backend error
    /// becomes an escalation.
    pub fn decide(&mut self, backend: &dyn DecisionBackend, obs: &Observation) -> Decision {
        let decision = backend
            .decide(&self.memory, obs)
            .unwrap_or_else(|e| escalation(e, obs, &self.memory));
        self.memory.working.active_skill = match &decision.action {
            Action::InvokePolicy { policy_id, .. } | Action::Recover { policy_id } => {
                Some(policy_id.clone())
            }
            _ => self.memory.working.active_skill.take(),
        };
        let tick = self.tick();
        self.log.push(tick, EventKind::Decision, &decision);
        decision
    }

    pub fn start_policy(&mut self, policy_id: &str, instruction: &Instruction) -> CallResult {
        self.call(
            "start_policy",
            json!({"policy_id": policy_id, "instruction": instruction.text, "direction": instruction.direction}),
        )
    }

    pub fn append(&mut self, record: &DatasetRecord) -> CallResult {
        self.call(
            "append_trajectory",
            json!({ "trajectory": record.to_value() }),
        )
    }
}

fn escalation(err: BackendError, obs: &Observation, memory: &MemoryState) -> Decision {
    let chosen = memory
        .task
        .subtasks
        .iter()
        .find(|s| !s.status.is_terminal())
        .map(|s| s.subtask_id.clone());
    Decision {
        chosen_subtask: chosen,
        action: Action::Escalate,
        trace: CoTTrace {
            scene_interpretation: obs.env_summary.text.clone(),
            current_objective: memory.task.goal_text.clone(),
            success_criteria: "a usable decision from the backend".to_string(),
            assessment: format!("backend failed: {err}"),
            next_action: "call_human for assistance".to_string(),
        },
    }
}
