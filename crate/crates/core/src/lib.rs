//! Agentic robot lifecycle: structured agent memory, a JSON-RPC tool bus, a
//! symbolic tabletop simulator, a policy pool with learning curves,
//! self-resetting data collection with forward/inverse pairs, supervised
//! deployment, a toy flow-matching policy and the experiment harness.

pub mod agentcore;
pub mod collector;
pub mod events;
pub mod fixtures;
pub mod fmpolicy;
pub mod harness;
pub mod memory;
pub mod orchestrator;
pub mod policypool;
pub mod runtime;
pub mod simenv;
pub mod toolbus;
pub mod util;

pub use agentcore::{
    Action, CoTTrace, Decision, DecisionBackend, FailureClass, Instruction, Observation,
    ScriptedPlanner,
};
pub use collector::{
    collect_pairs, CollectConfig, CollectRun, Dataset, DatasetRecord, EntangledPair, Trajectory,
};
pub use events::{Event, EventKind, EventLog};
pub use memory::{AgentMode, MemoryState, SubtaskStatus, TaskMemory};
pub use orchestrator::{
    deploy, execute_task, DeployConfig, DeployReport, TaskPlan, TaskResult, TaskStatus,
};
pub use policypool::{LearningCurve, PolicyPool, PolicySpec};
pub use runtime::{standard_registry, AgentSession, HumanConfig, RobotRuntime};
pub use simenv::{Direction, EnvState, Outcome, OutcomeKind, Scenario};
pub use toolbus::{ToolError, ToolRequest, ToolResponse};
