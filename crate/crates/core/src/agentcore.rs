//! The meta-controller: builds a decision from memory and observation.
//!
//! [`ScriptedPlanner`] is the reference [`DecisionBackend`]. It is a pure
//! rule table over `(MemoryState, Observation)`; the rules, in firing order:
//!
//! | # | condition | action |
//! |---|-----------|--------|
//! | 1 | every subtask Done or Escalated | `Finish` |
//! | 2 | next subtask (plan order) is Pending | `InvokePolicy` with its instruction |
//! | 3 | next subtask's success criterion holds on the summary | `MarkDone` |
//! | 4 | last actor was the human | `Retry` |
//! | 5 | last actor was a recovery skill that succeeded | `Retry` (or `Escalate` if attempts are spent) |
//! | 6 | last actor was a recovery skill that failed | `Escalate` |
//! | 7 | executor already used its human retry on this subtask | `Escalate` |
//! | 8 | failed inverse skill (collector) | `Escalate` |
//! | 9 | failed forward skill | classify on the summary, then the retry/recover/escalate table |
//!
//! Rule 9 uses [`retry_policy`]: a non-degrading failure with attempts left
//! retries; a degrading one with a mapped recovery skill and attempts left
//! recovers; everything else escalates. A data collector never caps
//! non-degrading retries (its loop has a global attempt budget instead) and
//! always escalates degrading failures to the human.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{AgentMode, MemoryState, SubtaskStatus};
use crate::policypool::PolicySpec;
use crate::simenv::{Direction, EnvState, EnvSummary, Scenario, SimError, SubtaskSpec};
use crate::toolbus::ToolDescriptor;

pub const STAT_POLICY_ACTIVE: &str = "policy_active";
pub const STAT_STEPS_EXECUTED: &str = "steps_executed";
/// 0 nothing yet, 1 success, 2 failure.
pub const STAT_LAST_OUTCOME: &str = "last_outcome";
/// 0 forward, 1 inverse, 2 recovery, 3 human.
pub const STAT_LAST_ACTOR: &str = "last_actor";
pub const STAT_INTERVENTIONS: &str = "interventions";

/// Key of the per-subtask intervention counter.
pub fn interventions_key(subtask_id: &str) -> String {
    format!("interventions/{subtask_id}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureClass {
    /// Scene still inside the precondition region; plain retry works.
    NonDegrading,
    /// Scene left the precondition region; needs recovery first.
    Degrading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstructionDirection {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub subtask_id: String,
    pub direction: InstructionDirection,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("unknown subtask `{0}`")]
    NotFound(String),
}

/// The instruction text is the scenario's verb phrase for the direction,
/// verbatim: `forward_text` or `inverse_text`.
pub fn build_instruction(
    scenario: &Scenario,
    subtask_id: &str,
    direction: InstructionDirection,
) -> Result<Instruction, AgentError> {
    let st = scenario
        .subtask(subtask_id)
        .ok_or_else(|| AgentError::NotFound(subtask_id.to_string()))?;
    let text = match direction {
        InstructionDirection::Forward => st.forward_text.clone(),
        InstructionDirection::Inverse => st.inverse_text.clone(),
    };
    Ok(Instruction {
        text,
        subtask_id: subtask_id.to_string(),
        direction,
    })
}

/// Instruction for a skill of any direction. Recovery skills run "inverse"
/// with the scenario's recovery phrase.
pub fn instruction_for(
    scenario: &Scenario,
    subtask_id: &str,
    direction: Direction,
) -> Result<Instruction, AgentError> {
    match direction {
        Direction::Forward => {
            build_instruction(scenario, subtask_id, InstructionDirection::Forward)
        }
        Direction::Inverse => {
            build_instruction(scenario, subtask_id, InstructionDirection::Inverse)
        }
        Direction::Recovery => {
            let st = scenario
                .subtask(subtask_id)
                .ok_or_else(|| AgentError::NotFound(subtask_id.to_string()))?;
            Ok(Instruction {
                text: st.recovery_text(),
                subtask_id: subtask_id.to_string(),
                direction: InstructionDirection::Inverse,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubtaskEvaluation {
    Success,
    Failure,
}

pub fn evaluate_subtask(summary: &EnvSummary, subtask: &SubtaskSpec) -> SubtaskEvaluation {
    if subtask.goal_holds(&summary.structured) {
        SubtaskEvaluation::Success
    } else {
        SubtaskEvaluation::Failure
    }
}

pub fn classify_failure(
    state_before: &EnvState,
    state_after: &EnvState,
    subtask: &SubtaskSpec,
    policy: &PolicySpec,
) -> FailureClass {
    if state_after.same_scene(state_before)
        && subtask.precondition_holds(state_before, policy.direction)
    {
        return FailureClass::NonDegrading;
    }
    if subtask.precondition_holds(state_after, policy.direction) {
        FailureClass::NonDegrading
    } else {
        FailureClass::Degrading
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureResponse {
    Retry,
    Recover,
    Escalate,
}

/// Retry/recover/escalate table shared by the planner and the orchestrator.
/// `attempts` counts attempts already made on the subtask.
pub fn retry_policy(
    class: FailureClass,
    attempts: u32,
    max_attempts: u32,
    has_recovery: bool,
) -> FailureResponse {
    match class {
        FailureClass::NonDegrading if attempts < max_attempts => FailureResponse::Retry,
        FailureClass::Degrading if has_recovery && attempts < max_attempts => {
            FailureResponse::Recover
        }
        _ => FailureResponse::Escalate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub env_summary: EnvSummary,
    pub robot_stats: BTreeMap<String, f64>,
    pub timestamp: u64,
}

impl Observation {
    pub fn stat(&self, key: &str) -> f64 {
        self.robot_stats.get(key).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoTTrace {
    pub scene_interpretation: String,
    pub current_objective: String,
    pub success_criteria: String,
    pub assessment: String,
    pub next_action: String,
}

impl CoTTrace {
    pub fn is_complete(&self) -> bool {
        [
            &self.scene_interpretation,
            &self.current_objective,
            &self.success_criteria,
            &self.assessment,
            &self.next_action,
        ]
        .iter()
        .all(|f| !f.trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    InvokePolicy {
        policy_id: String,
        instruction: Instruction,
    },
    Retry,
    Recover {
        policy_id: String,
    },
    Escalate,
    MarkDone,
    Finish,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub chosen_subtask: Option<String>,
    pub action: Action,
    pub trace: CoTTrace,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("decision backend unavailable: {0}")]
    Unavailable(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("inconsistent decision context: {0}")]
    Context(String),
}

/// Anything that can turn a decision context into the next tool-level action.
/// Callers treat an error as `Escalate`.
pub trait DecisionBackend: Send + Sync {
    fn decide(&self, memory: &MemoryState, obs: &Observation) -> Result<Decision, BackendError>;
}

pub fn decide(
    memory: &MemoryState,
    obs: &Observation,
    backend: &dyn DecisionBackend,
) -> Result<Decision, BackendError> {
    backend.decide(memory, obs)
}

/// What the planner knows about one task-memory entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerEntry {
    pub subtask_id: String,
    /// Forward entries perform the subtask; inverse entries undo it.
    pub direction: Direction,
    pub policy_id: String,
    pub max_attempts: u32,
    pub recovery: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ScriptedPlanner {
    scenario: Arc<Scenario>,
    entries: BTreeMap<String, PlannerEntry>,
}

impl ScriptedPlanner {
    /// `entries` is keyed by task-memory subtask id.
    pub fn new(
        scenario: Arc<Scenario>,
        entries: BTreeMap<String, PlannerEntry>,
    ) -> Result<Self, SimError> {
        for e in entries.values() {
            scenario.require(&e.subtask_id)?;
        }
        Ok(Self { scenario, entries })
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn entry(&self, entry_id: &str) -> Option<&PlannerEntry> {
        self.entries.get(entry_id)
    }

    fn done_criterion(&self, spec: &SubtaskSpec, entry: &PlannerEntry) -> (bool, String) {
        match entry.direction {
            Direction::Inverse => (
                false,
                format!(
                    "scene back in the forward region: {}",
                    spec.precondition_predicate.describe()
                ),
            ),
            _ => (true, spec.goal_predicate.describe()),
        }
    }
}

fn render_action(action: &Action, entry: Option<&PlannerEntry>) -> String {
    match action {
        Action::InvokePolicy {
            policy_id,
            instruction,
        } => {
            format!("start_policy {policy_id} with \"{}\"", instruction.text)
        }
        Action::Retry => format!(
            "start_policy {} again",
            entry.map_or("the same policy", |e| e.policy_id.as_str())
        ),
        Action::Recover { policy_id } => format!("start_policy {policy_id} to recover the scene"),
        Action::Escalate => "call_human for assistance".to_string(),
        Action::MarkDone => "mark the subtask done and move on".to_string(),
        Action::Finish => "finish the task".to_string(),
    }
}

impl DecisionBackend for ScriptedPlanner {
    fn decide(&self, memory: &MemoryState, obs: &Observation) -> Result<Decision, BackendError> {
        let task = &memory.task;
        let scene = obs.env_summary.text.clone();
        let collector = memory.role.mode == AgentMode::DataCollector;

        let Some(next) = task.subtasks.iter().find(|s| !s.status.is_terminal()) else {
            let done = task
                .subtasks
                .iter()
                .filter(|s| s.status == SubtaskStatus::Done)
                .count();
            let action = Action::Finish;
            return Ok(Decision {
                chosen_subtask: None,
                trace: CoTTrace {
                    scene_interpretation: scene,
                    current_objective: format!("task `{}`: {}", task.task_id, task.goal_text),
                    success_criteria: "every subtask done or handed off".to_string(),
                    assessment: format!(
                        "{done} of {} subtasks done; nothing left to run",
                        task.subtasks.len()
                    ),
                    next_action: render_action(&action, None),
                },
                action,
            });
        };
        let entry = self.entries.get(&next.subtask_id).ok_or_else(|| {
            BackendError::Context(format!("no plan entry for `{}`", next.subtask_id))
        })?;
        let spec = self.scenario.subtask(&entry.subtask_id).ok_or_else(|| {
            BackendError::Context(format!("unknown subtask `{}`", entry.subtask_id))
        })?;
        let state = &obs.env_summary.structured;
        let (forward_entry, criteria) = self.done_criterion(spec, entry);
        let reached = if forward_entry {
            spec.goal_holds(state)
        } else {
            spec.precondition_holds(state, Direction::Forward)
        };
        let attempts = task.attempts(&next.subtask_id) + 1;
        let last_failed = obs.stat(STAT_LAST_OUTCOME) == 2.0;
        let last_actor = obs.stat(STAT_LAST_ACTOR) as u8;
        let helped = obs.stat(&interventions_key(&entry.subtask_id));
        let max_attempts = if collector {
            u32::MAX
        } else {
            entry.max_attempts
        };

        let (action, assessment) = match next.status {
            SubtaskStatus::Pending => {
                let dir = if entry.direction == Direction::Inverse {
                    Direction::Inverse
                } else {
                    Direction::Forward
                };
                let instruction = instruction_for(&self.scenario, &entry.subtask_id, dir)
                    .map_err(|e| BackendError::Context(e.to_string()))?;
                (
                    Action::InvokePolicy {
                        policy_id: entry.policy_id.clone(),
                        instruction,
                    },
                    "subtask not started; its precondition region is the expected scene"
                        .to_string(),
                )
            }
            _ if reached => (
                Action::MarkDone,
                "success criterion satisfied on the current summary".to_string(),
            ),
            _ if last_actor == 3 => (
                Action::Retry,
                "the operator restored the scene; retry".to_string(),
            ),
            _ if last_actor == 2 && !last_failed => {
                if attempts < max_attempts {
                    (
                        Action::Retry,
                        "recovery restored the precondition; retry".to_string(),
                    )
                } else {
                    (
                        Action::Escalate,
                        "recovered but no attempts left".to_string(),
                    )
                }
            }
            _ if last_actor == 2 => (
                Action::Escalate,
                "recovery failed; the scene needs a human".to_string(),
            ),
            _ if !collector && helped >= 1.0 => (
                Action::Escalate,
                "already retried with human help and still failing".to_string(),
            ),
            _ if entry.direction == Direction::Inverse => (
                Action::Escalate,
                "reset skill failed; a human must restore the scene".to_string(),
            ),
            _ => {
                let class = if spec.precondition_holds(state, Direction::Forward) {
                    FailureClass::NonDegrading
                } else {
                    FailureClass::Degrading
                };
                let response = if collector && class == FailureClass::Degrading {
                    FailureResponse::Escalate
                } else {
                    retry_policy(class, attempts, max_attempts, entry.recovery.is_some())
                };
                let why = match class {
                    FailureClass::NonDegrading => "failed but the scene is still retryable",
                    FailureClass::Degrading => "failed and the scene left the precondition region",
                };
                let action = match response {
                    FailureResponse::Retry => Action::Retry,
                    FailureResponse::Recover => Action::Recover {
                        policy_id: entry.recovery.clone().unwrap_or_default(),
                    },
                    FailureResponse::Escalate => Action::Escalate,
                };
                let budget = if collector {
                    format!("attempt {attempts}")
                } else {
                    format!("attempt {attempts} of {max_attempts}")
                };
                (action, format!("{why} ({budget})"))
            }
        };
        let trace = CoTTrace {
            scene_interpretation: scene,
            current_objective: format!("{}: {}", next.subtask_id, next.description),
            success_criteria: criteria,
            assessment,
            next_action: render_action(&action, Some(entry)),
        };
        Ok(Decision {
            chosen_subtask: Some(next.subtask_id.clone()),
            action,
            trace,
        })
    }
}

/// Request body sent to a remote reasoning service.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub memory: MemoryState,
    pub observation: Observation,
    pub tools: Vec<ToolDescriptor>,
    pub trace_format: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub decision: RemoteDecision,
    pub trace: CoTTrace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteDecision {
    pub chosen_subtask: Option<String>,
    pub action: Action,
}

pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, body: &str) -> Result<String, String>;
}

/// Transport that refuses every request.
#[derive(Debug, Clone, Copy, Default)]
pub struct DisabledTransport;

impl HttpTransport for DisabledTransport {
    fn post_json(&self, url: &str, _body: &str) -> Result<String, String> {
        Err(format!("remote backend disabled (would POST to {url})"))
    }
}

/// Backend that delegates to a remote service over JSON.
pub struct RemoteBackend<T: HttpTransport = DisabledTransport> {
    pub endpoint: String,
    pub tools: Vec<ToolDescriptor>,
    transport: T,
}

impl RemoteBackend<DisabledTransport> {
    pub fn disabled(endpoint: impl Into<String>, tools: Vec<ToolDescriptor>) -> Self {
        Self::with_transport(endpoint, tools, DisabledTransport)
    }
}

impl<T: HttpTransport> RemoteBackend<T> {
    pub fn with_transport(
        endpoint: impl Into<String>,
        tools: Vec<ToolDescriptor>,
        transport: T,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            tools,
            transport,
        }
    }

    pub fn request_body(&self, memory: &MemoryState, obs: &Observation) -> String {
        let req = RemoteRequest {
            memory: memory.clone(),
            observation: obs.clone(),
            tools: self.tools.clone(),
            trace_format: "cot-v1".to_string(),
        };
        crate::util::canonical_json(&req).expect("request is serializable")
    }
}

impl<T: HttpTransport> DecisionBackend for RemoteBackend<T> {
    fn decide(&self, memory: &MemoryState, obs: &Observation) -> Result<Decision, BackendError> {
        let body = self.request_body(memory, obs);
        let reply = self
            .transport
            .post_json(&self.endpoint, &body)
            .map_err(BackendError::Unavailable)?;
        let resp: RemoteResponse =
            serde_json::from_str(&reply).map_err(|e| BackendError::Malformed(e.to_string()))?;
        if !resp.trace.is_complete() {
            return Err(BackendError::Malformed("incomplete reasoning trace".into()));
        }
        Ok(Decision {
            chosen_subtask: resp.decision.chosen_subtask,
            action: resp.decision.action,
            trace: resp.trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::memory::TaskMemory;
    use crate::simenv::{apply_outcome, summarize, ObjectStatus, Outcome};

    fn planner() -> ScriptedPlanner {
        let scenario = Arc::new(fixtures::vanity_scenario());
        let pool = fixtures::vanity_pool();
        let mut entries = BTreeMap::new();
        for id in ["place_primer", "place_lotion"] {
            let fwd = pool.find(id, Direction::Forward).unwrap();
            let rec = pool
                .find(id, Direction::Recovery)
                .map(|p| p.policy_id.clone());
            entries.insert(
                id.to_string(),
                PlannerEntry {
                    subtask_id: id.to_string(),
                    direction: Direction::Forward,
                    policy_id: fwd.policy_id.clone(),
                    max_attempts: 3,
                    recovery: if id == "place_lotion" { rec } else { None },
                },
            );
        }
        ScriptedPlanner::new(scenario, entries).unwrap()
    }

    fn memory() -> MemoryState {
        MemoryState::new(
            AgentMode::TaskExecutor,
            TaskMemory::new(
                "vanity",
                "tidy the vanity table",
                vec![
                    (
                        "place_primer".into(),
                        "place the primer into the drawer".into(),
                    ),
                    ("place_lotion".into(), "place the body lotion".into()),
                ],
            ),
        )
    }

    fn obs(env: &EnvState, stats: &[(&str, f64)]) -> Observation {
        Observation {
            env_summary: summarize(env),
            robot_stats: stats.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            timestamp: env.tick,
        }
    }

    #[test]
    fn instructions_follow_scenario_text() {
        let s = fixtures::vanity_scenario();
        let f = build_instruction(&s, "place_primer", InstructionDirection::Forward).unwrap();
        assert_eq!(f.text, "place the primer into the drawer");
        let i = build_instruction(&s, "place_primer", InstructionDirection::Inverse).unwrap();
        assert_eq!(i.text, "take the primer out of the drawer");
        assert!(matches!(
            build_instruction(&s, "juggle", InstructionDirection::Forward),
            Err(AgentError::NotFound(_))
        ));
    }

    #[test]
    fn evaluation_uses_goal_predicate() {
        let s = fixtures::vanity_scenario();
        let lotion = s.subtask("place_lotion").unwrap();
        let mut env = s.initial_state();
        env.objects
            .insert("body_lotion".into(), ObjectStatus::AtGoal);
        assert_eq!(
            evaluate_subtask(&summarize(&env), lotion),
            SubtaskEvaluation::Success
        );
        env.objects
            .insert("body_lotion".into(), ObjectStatus::Tipped);
        assert_eq!(
            evaluate_subtask(&summarize(&env), lotion),
            SubtaskEvaluation::Failure
        );
        let primer = s.subtask("place_primer").unwrap();
        let mut env = s.initial_state();
        env.objects.insert("primer".into(), ObjectStatus::AtGoal);
        assert_eq!(env.drawer, crate::simenv::DrawerState::Open);
        assert_eq!(
            evaluate_subtask(&summarize(&env), primer),
            SubtaskEvaluation::Failure
        );
    }

    #[test]
    fn classification() {
        let s = fixtures::vanity_scenario();
        let pool = fixtures::vanity_pool();
        let lotion = s.subtask("place_lotion").unwrap();
        let spec = pool.spec("lotion_fwd").unwrap();
        let before = s.initial_state();
        let mut empty_grasp = before.clone();
        empty_grasp.tick += 9;
        assert_eq!(
            classify_failure(&before, &empty_grasp, lotion, spec),
            FailureClass::NonDegrading
        );
        assert_eq!(
            classify_failure(&before, &before, lotion, spec),
            FailureClass::NonDegrading
        );
        let mut tipped = before.clone();
        tipped
            .objects
            .insert("body_lotion".into(), ObjectStatus::Tipped);
        assert_eq!(
            classify_failure(&before, &tipped, lotion, spec),
            FailureClass::Degrading
        );
    }

    #[test]
    fn finish_when_everything_terminal() {
        let p = planner();
        let mut m = memory();
        for id in ["place_primer", "place_lotion"] {
            m.task.transition(id, SubtaskStatus::Active).unwrap();
            m.task.transition(id, SubtaskStatus::Done).unwrap();
        }
        let d = p
            .decide(&m, &obs(&fixtures::vanity_scenario().initial_state(), &[]))
            .unwrap();
        assert_eq!(d.action, Action::Finish);
        assert!(d.trace.is_complete());
    }

    #[test]
    fn mark_done_when_primer_stored_and_drawer_closed() {
        let p = planner();
        let s = fixtures::vanity_scenario();
        let mut m = memory();
        m.task
            .transition("place_primer", SubtaskStatus::Active)
            .unwrap();
        let env = apply_outcome(
            &s.initial_state(),
            &s,
            s.subtask("place_primer").unwrap(),
            Direction::Forward,
            &Outcome::success(5),
        );
        let d = p
            .decide(
                &m,
                &obs(&env, &[(STAT_LAST_OUTCOME, 1.0), (STAT_LAST_ACTOR, 0.0)]),
            )
            .unwrap();
        assert_eq!(d.action, Action::MarkDone);
        assert_eq!(d.chosen_subtask.as_deref(), Some("place_primer"));
    }

    #[test]
    fn nondegrading_failure_retries_until_budget() {
        let p = planner();
        let env = fixtures::vanity_scenario().initial_state();
        let failed = [(STAT_LAST_OUTCOME, 2.0), (STAT_LAST_ACTOR, 0.0)];
        let mut m = memory();
        m.task
            .transition("place_primer", SubtaskStatus::Active)
            .unwrap();
        assert_eq!(
            p.decide(&m, &obs(&env, &failed)).unwrap().action,
            Action::Retry
        );
        for _ in 0..2 {
            m.task
                .transition("place_primer", SubtaskStatus::Failed)
                .unwrap();
            m.task
                .transition("place_primer", SubtaskStatus::Active)
                .unwrap();
        }
        assert_eq!(m.task.attempts("place_primer"), 2);
        assert_eq!(
            p.decide(&m, &obs(&env, &failed)).unwrap().action,
            Action::Escalate
        );
    }

    #[test]
    fn degrading_failure_recovers_only_when_mapped() {
        let p = planner();
        let s = fixtures::vanity_scenario();
        let failed = [(STAT_LAST_OUTCOME, 2.0), (STAT_LAST_ACTOR, 0.0)];
        let mut m = memory();
        m.task
            .transition("place_primer", SubtaskStatus::Active)
            .unwrap();
        let mut env = s.initial_state();
        env.objects.insert("primer".into(), ObjectStatus::Displaced);
        assert_eq!(
            p.decide(&m, &obs(&env, &failed)).unwrap().action,
            Action::Escalate
        );

        m.task
            .transition("place_primer", SubtaskStatus::Active)
            .unwrap_err();
        let mut m = memory();
        m.task
            .transition("place_primer", SubtaskStatus::Active)
            .unwrap();
        m.task
            .transition("place_primer", SubtaskStatus::Done)
            .unwrap();
        m.task
            .transition("place_lotion", SubtaskStatus::Active)
            .unwrap();
        let mut env = s.initial_state();
        env.objects
            .insert("body_lotion".into(), ObjectStatus::Tipped);
        assert_eq!(
            p.decide(&m, &obs(&env, &failed)).unwrap().action,
            Action::Recover {
                policy_id: "lotion_rec".into()
            }
        );
    }

    #[test]
    fn planner_is_deterministic_and_traces_complete() {
        let p = planner();
        let m = memory();
        let o = obs(&fixtures::vanity_scenario().initial_state(), &[]);
        let a = p.decide(&m, &o).unwrap();
        assert_eq!(a, p.decide(&m, &o).unwrap());
        assert!(a.trace.is_complete());
        match a.action {
            Action::InvokePolicy { instruction, .. } => assert!(!instruction.text.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    struct Canned(String);
    impl HttpTransport for Canned {
        fn post_json(&self, _url: &str, body: &str) -> Result<String, String> {
            assert!(body.contains("\"trace_format\":\"cot-v1\""));
            Ok(self.0.clone())
        }
    }

    #[test]
    fn remote_backend_disabled_and_canned() {
        let m = memory();
        let o = obs(&fixtures::vanity_scenario().initial_state(), &[]);
        let off = RemoteBackend::disabled("http://localhost:9/decide", vec![]);
        assert!(matches!(
            off.decide(&m, &o),
            Err(BackendError::Unavailable(_))
        ));
        let reply = r#"{"decision":{"chosen_subtask":"place_primer","action":"Escalate"},
            "trace":{"scene_interpretation":"s","current_objective":"o","success_criteria":"c","assessment":"a","next_action":"n"}}"#;
        let on = RemoteBackend::with_transport("http://x", vec![], Canned(reply.into()));
        let d = on.decide(&m, &o).unwrap();
        assert_eq!(d.action, Action::Escalate);
        let bad = RemoteBackend::with_transport("http://x", vec![], Canned("{}".into()));
        assert!(matches!(
            bad.decide(&m, &o),
            Err(BackendError::Malformed(_))
        ));
    }
}
