//! Self-resetting data collection: alternate a subtask's forward and inverse
//! skills, pair up successful runs and append everything to a JSONL dataset.
//!
//! Dataset lines are canonical JSON:
//!
//! ```text
//! {"type":"trajectory", <Trajectory fields>, "schema":"eap-v1"}
//! {"type":"pair", "pair_id":..., "forward":{...}, "inverse":{...}, "schema":"eap-v1"}
//! ```

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agentcore::{classify_failure, Action, Instruction, PlannerEntry, ScriptedPlanner};
use crate::events::{EventKind, EventLog};
use crate::memory::{AgentMode, MemoryError, MemoryState, SubtaskStatus, TaskMemory};
use crate::policypool::PolicyPool;
use crate::runtime::{standard_registry, AgentSession, HumanConfig, RobotRuntime};
use crate::simenv::{Direction, Outcome, OutcomeKind, Scenario, SimError};
use crate::toolbus::ToolError;
use crate::util::{canonical_json, episode_rng};

pub const SCHEMA: &str = "eap-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrajectoryDirection {
    Forward,
    Inverse,
    Recovery,
    Human,
}

impl From<Direction> for TrajectoryDirection {
    fn from(d: Direction) -> Self {
        match d {
            Direction::Forward => TrajectoryDirection::Forward,
            Direction::Inverse => TrajectoryDirection::Inverse,
            Direction::Recovery => TrajectoryDirection::Recovery,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: u64,
    pub obs_digest: String,
    pub q_digest: String,
    pub a_digest: String,
}

/// Real-valued payload for demonstrations that carry actual vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryExt {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trajectory_id: String,
    pub policy_id: String,
    pub direction: TrajectoryDirection,
    pub instruction: Instruction,
    pub steps: Vec<TrajectoryStep>,
    pub outcome: Outcome,
    pub episode: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ext: Option<TrajectoryExt>,
}

impl Trajectory {
    /// Steps non-empty with strictly increasing `t`.
    pub fn is_well_formed(&self) -> bool {
        !self.steps.is_empty() && self.steps.windows(2).all(|w| w[0].t < w[1].t)
    }

    pub fn is_success(&self) -> bool {
        self.outcome.kind == OutcomeKind::Success
    }
}

/// Successful forward runs and human corrections feed the learning curves.
pub fn counts_toward_learning(t: &Trajectory) -> bool {
    match t.direction {
        TrajectoryDirection::Forward => t.is_success(),
        TrajectoryDirection::Human => true,
        TrajectoryDirection::Inverse | TrajectoryDirection::Recovery => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntangledPair {
    pub pair_id: String,
    pub forward: Trajectory,
    pub inverse: Trajectory,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset record: {0}")]
    Record(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
// Records are streamed one at a time, so the unboxed pair is fine.
#[allow(clippy::large_enum_variant)]
pub enum DatasetRecord {
    Trajectory(Trajectory),
    Pair(EntangledPair),
}

impl DatasetRecord {
    pub fn to_value(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("records serialize");
        v.as_object_mut()
            .expect("records are objects")
            .insert("schema".into(), SCHEMA.into());
        v
    }

    pub fn from_value(mut v: Value) -> Result<Self, DatasetError> {
        let obj = v
            .as_object_mut()
            .ok_or_else(|| DatasetError::Record("record must be an object".into()))?;
        match obj.remove("schema") {
            Some(Value::String(s)) if s == SCHEMA => {}
            other => {
                return Err(DatasetError::Record(format!(
                    "unsupported schema {other:?}"
                )))
            }
        }
        let rec: DatasetRecord =
            serde_json::from_value(v).map_err(|e| DatasetError::Record(e.to_string()))?;
        match &rec {
            DatasetRecord::Trajectory(t) if !t.is_well_formed() => Err(DatasetError::Record(
                format!("trajectory `{}` has malformed steps", t.trajectory_id),
            )),
            _ => Ok(rec),
        }
    }

    /// Canonical line, newline included.
    pub fn to_line(&self) -> String {
        let mut s = canonical_json(&self.to_value()).expect("records serialize");
        s.push('\n');
        s
    }

    pub fn from_line(line: &str) -> Result<Self, DatasetError> {
        let v: Value = serde_json::from_str(line.trim_end_matches('\n'))
            .map_err(|e| DatasetError::Record(e.to_string()))?;
        Self::from_value(v)
    }
}

enum Sink {
    File(File),
    Memory(Vec<u8>),
    Null,
}

/// Append-only JSONL dataset with per-policy learning counters.
pub struct Dataset {
    path: Option<PathBuf>,
    sink: Sink,
    len: u64,
    records: u64,
    counters: BTreeMap<String, u64>,
}

impl Dataset {
    /// Creates or truncates the file at `path`.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = File::create(&path)?;
        Ok(Self {
            path: Some(path),
            sink: Sink::File(file),
            len: 0,
            records: 0,
            counters: BTreeMap::new(),
        })
    }

    /// Opens an existing dataset for appending and rebuilds its counters.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref().to_path_buf();
        let records = read_all(&path)?;
        let mut ds = Self {
            sink: Sink::File(OpenOptions::new().append(true).open(&path)?),
            len: std::fs::metadata(&path)?.len(),
            records: 0,
            counters: BTreeMap::new(),
            path: Some(path),
        };
        for r in &records {
            ds.count(r);
        }
        Ok(ds)
    }

    pub fn in_memory() -> Self {
        Self {
            path: None,
            sink: Sink::Memory(Vec::new()),
            len: 0,
            records: 0,
            counters: BTreeMap::new(),
        }
    }

    /// Keeps offsets and counters, discards the bytes.
    pub fn null() -> Self {
        Self {
            sink: Sink::Null,
            ..Self::in_memory()
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn count(&mut self, record: &DatasetRecord) {
        self.records += 1;
        if let DatasetRecord::Trajectory(t) = record {
            if counts_toward_learning(t) {
                *self.counters.entry(t.policy_id.clone()).or_insert(0) += 1;
            }
        }
    }

    /// Appends one line and returns its byte offset.
    pub fn append(&mut self, record: &DatasetRecord) -> Result<u64, DatasetError> {
        let line = record.to_line();
        match &mut self.sink {
            Sink::File(f) => f.write_all(line.as_bytes())?,
            Sink::Memory(buf) => buf.extend_from_slice(line.as_bytes()),
            Sink::Null => {}
        }
        let offset = self.len;
        self.len += line.len() as u64;
        self.count(record);
        Ok(offset)
    }

    pub fn byte_len(&self) -> u64 {
        self.len
    }

    pub fn record_count(&self) -> u64 {
        self.records
    }

    pub fn counter(&self, policy_id: &str) -> u64 {
        self.counters.get(policy_id).copied().unwrap_or(0)
    }

    pub fn counters(&self) -> &BTreeMap<String, u64> {
        &self.counters
    }

    /// Bytes of an in-memory dataset.
    pub fn bytes(&self) -> Option<&[u8]> {
        match &self.sink {
            Sink::Memory(b) => Some(b),
            _ => None,
        }
    }
}

/// Reads the record starting at `offset`.
pub fn read_at(
    path: impl AsRef<Path>,
    offset: u64,
) -> Result<(DatasetRecord, String), DatasetError> {
    let mut f = File::open(path)?;
    f.seek(SeekFrom::Start(offset))?;
    let mut line = String::new();
    BufReader::new(f).read_line(&mut line)?;
    Ok((DatasetRecord::from_line(&line)?, line))
}

pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(DatasetRecord::from_line)
        .collect()
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("mismatched pair: {0}")]
    MismatchedPair(String),
    #[error("attempt budget of {budget} exhausted after {} pairs", partial.pairs.len())]
    BudgetExceeded {
        budget: u64,
        partial: Box<CollectRun>,
    },
    #[error("collection needs forward and inverse policies for `{0}`")]
    MissingPolicy(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("tool call failed: {0}")]
    Tool(#[from] ToolError),
}

/// Pairs a successful forward run with the successful inverse that undid it.
pub fn assemble_pair(
    forward: Trajectory,
    inverse: Trajectory,
) -> Result<EntangledPair, CollectError> {
    if forward.direction != TrajectoryDirection::Forward || !forward.is_success() {
        return Err(CollectError::MismatchedPair(
            "forward half must be a successful forward run".into(),
        ));
    }
    if inverse.direction != TrajectoryDirection::Inverse || !inverse.is_success() {
        return Err(CollectError::MismatchedPair(
            "inverse half must be a successful inverse run".into(),
        ));
    }
    if forward.episode != inverse.episode {
        return Err(CollectError::MismatchedPair(format!(
            "episodes differ: {} vs {}",
            forward.episode, inverse.episode
        )));
    }
    Ok(EntangledPair {
        pair_id: format!("{}+{}", forward.trajectory_id, inverse.trajectory_id),
        forward,
        inverse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub subtask_id: String,
    pub n_pairs: usize,
    /// Maximum policy starts, forward and inverse together.
    pub budget: u64,
    pub seed: u64,
    pub episode: u64,
    pub human: HumanConfig,
}

/// Everything a collection run produced. The pool and dataset come back so
/// runs can be chained.
pub struct CollectRun {
    pub pairs: Vec<EntangledPair>,
    pub log: EventLog,
    pub pool: PolicyPool,
    pub dataset: Dataset,
    pub attempts: u64,
    pub interventions: u64,
}

impl std::fmt::Debug for CollectRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CollectRun")
            .field("pairs", &self.pairs.len())
            .field("attempts", &self.attempts)
            .field("interventions", &self.interventions)
            .finish()
    }
}

fn entry_ids(subtask_id: &str) -> (String, String) {
    (
        format!("{subtask_id}/forward"),
        format!("{subtask_id}/inverse"),
    )
}

/// Planner for one subtask's forward/inverse loop.
pub fn collection_planner(
    scenario: Arc<Scenario>,
    pool: &PolicyPool,
    subtask_id: &str,
) -> Result<ScriptedPlanner, CollectError> {
    let missing = || CollectError::MissingPolicy(subtask_id.to_string());
    let fwd = pool
        .find(subtask_id, Direction::Forward)
        .ok_or_else(missing)?;
    let inv = pool
        .find(subtask_id, Direction::Inverse)
        .ok_or_else(missing)?;
    let (f, i) = entry_ids(subtask_id);
    let mut entries = BTreeMap::new();
    for (id, direction, policy_id) in [
        (f, Direction::Forward, &fwd.policy_id),
        (i, Direction::Inverse, &inv.policy_id),
    ] {
        entries.insert(
            id,
            PlannerEntry {
                subtask_id: subtask_id.to_string(),
                direction,
                policy_id: policy_id.clone(),
                max_attempts: u32::MAX,
                recovery: None,
            },
        );
    }
    Ok(ScriptedPlanner::new(scenario, entries)?)
}

/// Runs the self-resetting loop until `n_pairs` pairs exist or the attempt
/// budget runs out.
///
/// Per pair the agent invokes the forward skill, retries non-degrading
/// failures, calls the human after degrading ones, then runs the inverse
/// skill, calling the human after each inverse failure. Both halves and the
/// pair record are appended through `append_trajectory`; failed runs and
/// human corrections are appended as they happen.
pub fn collect_pairs(
    scenario: Arc<Scenario>,
    pool: PolicyPool,
    dataset: Dataset,
    config: &CollectConfig,
    log: EventLog,
) -> Result<CollectRun, CollectError> {
    let st = scenario.require(&config.subtask_id)?.clone();
    let planner = collection_planner(scenario.clone(), &pool, &config.subtask_id)?;
    let registry = standard_registry();
    let env = scenario.initial_state();
    let mut pool = pool;
    pool.set_episode(config.episode);
    let runtime = RobotRuntime::new(
        scenario.clone(),
        pool,
        env,
        episode_rng(config.seed, config.episode),
        config.human.clone(),
    )
    .with_dataset(dataset);
    let goal = format!(
        "collect {} entangled pairs for {}",
        config.n_pairs, config.subtask_id
    );
    let memory = MemoryState::new(
        AgentMode::DataCollector,
        TaskMemory::new("collect", goal.clone(), vec![]),
    );
    let mut session = AgentSession::new(&registry, runtime, memory, log);
    let (fwd_id, inv_id) = entry_ids(&config.subtask_id);
    let mut pairs = Vec::new();
    let mut attempts = 0u64;
    let mut interventions = 0u64;
    let mut exhausted = false;

    'pairs: while pairs.len() < config.n_pairs {
        session.memory.task = TaskMemory::new(
            format!("pair-{}", pairs.len()),
            goal.clone(),
            vec![
                (fwd_id.clone(), st.forward_text.clone()),
                (inv_id.clone(), st.inverse_text.clone()),
            ],
        );
        let mut forward: Option<Trajectory> = None;
        let mut inverse: Option<Trajectory> = None;
        let mut obs = session.observe();
        loop {
            let decision = session.decide(&planner, &obs);
            let Some(entry_id) = decision.chosen_subtask.clone() else {
                break;
            };
            let policy_id = planner
                .entry(&entry_id)
                .map(|e| e.policy_id.clone())
                .unwrap_or_default();
            let instruction = match &decision.action {
                Action::InvokePolicy { instruction, .. } => Some(instruction.clone()),
                Action::Retry => {
                    session
                        .memory
                        .task
                        .transition(&entry_id, SubtaskStatus::Failed)?;
                    session
                        .memory
                        .task
                        .transition(&entry_id, SubtaskStatus::Active)?;
                    let dir = planner
                        .entry(&entry_id)
                        .map_or(Direction::Forward, |e| e.direction);
                    Some(
                        crate::agentcore::instruction_for(&scenario, &config.subtask_id, dir)
                            .map_err(|e| CollectError::MissingPolicy(e.to_string()))?,
                    )
                }
                _ => None,
            };
            match decision.action {
                Action::Finish => break,
                Action::InvokePolicy { .. } | Action::Retry => {
                    if matches!(decision.action, Action::InvokePolicy { .. }) {
                        session
                            .memory
                            .task
                            .transition(&entry_id, SubtaskStatus::Active)?;
                    }
                    if attempts >= config.budget {
                        exhausted = true;
                        break 'pairs;
                    }
                    attempts += 1;
                    let instruction = instruction.expect("set above");
                    let before = obs.env_summary.structured.clone();
                    let result = session.start_policy(&policy_id, &instruction)?;
                    let traj: Trajectory = serde_json::from_value(result["trajectory"].clone())
                        .expect("start_policy returns a trajectory");
                    obs = session.observe();
                    let spec = session
                        .runtime()
                        .pool
                        .spec(&policy_id)
                        .expect("planner policies exist")
                        .clone();
                    let class = (!traj.is_success()).then(|| {
                        classify_failure(&before, &obs.env_summary.structured, &st, &spec)
                    });
                    let tick = session.tick();
                    session.log.push(
                        tick,
                        EventKind::Outcome,
                        &json!({
                            "policy_id": policy_id,
                            "direction": spec.direction,
                            "kind": traj.outcome.kind,
                            "failure_class": class,
                            "steps": traj.outcome.steps_taken,
                        }),
                    );
                    if traj.is_success() {
                        match spec.direction {
                            Direction::Forward => forward = Some(traj),
                            _ => inverse = Some(traj),
                        }
                    } else {
                        session.append(&DatasetRecord::Trajectory(traj))?;
                    }
                }
                Action::MarkDone => {
                    session
                        .memory
                        .task
                        .transition(&entry_id, SubtaskStatus::Done)?;
                    if entry_id == inv_id {
                        let pair = assemble_pair(
                            forward
                                .take()
                                .expect("forward success precedes the inverse"),
                            inverse.take().expect("inverse success precedes completion"),
                        )?;
                        session.append(&DatasetRecord::Trajectory(pair.forward.clone()))?;
                        session.append(&DatasetRecord::Trajectory(pair.inverse.clone()))?;
                        session.append(&DatasetRecord::Pair(pair.clone()))?;
                        pairs.push(pair);
                        break;
                    }
                }
                Action::Escalate | Action::Recover { .. } => {
                    let result = session.call(
                        "call_human",
                        json!({"reason": decision.trace.assessment, "subtask_id": config.subtask_id}),
                    )?;
                    interventions += 1;
                    let tick = session.tick();
                    session.log.push(
                        tick,
                        EventKind::Intervention,
                        &json!({"subtask_id": config.subtask_id, "entry": entry_id, "restored": result["restored"]}),
                    );
                    let traj: Trajectory = serde_json::from_value(result["trajectory"].clone())
                        .expect("call_human returns a trajectory");
                    session.append(&DatasetRecord::Trajectory(traj))?;
                    obs = session.observe();
                }
            }
        }
    }

    let (runtime, _memory, log) = session.into_parts();
    let run = CollectRun {
        pairs,
        log,
        pool: runtime.pool,
        dataset: runtime.dataset,
        attempts,
        interventions,
    };
    if exhausted {
        return Err(CollectError::BudgetExceeded {
            budget: config.budget,
            partial: Box::new(run),
        });
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::policypool::{synth_steps, LearningCurve};
    use crate::simenv::in_precondition;

    fn traj(dir: TrajectoryDirection, kind: OutcomeKind, episode: u64, id: &str) -> Trajectory {
        let s = fixtures::vanity_scenario();
        Trajectory {
            trajectory_id: id.into(),
            policy_id: "primer_fwd".into(),
            direction: dir,
            instruction: crate::agentcore::build_instruction(
                &s,
                "place_primer",
                crate::agentcore::InstructionDirection::Forward,
            )
            .unwrap(),
            steps: synth_steps(&s.initial_state(), "x", 3),
            outcome: Outcome {
                kind,
                failure_class: None,
                steps_taken: 3,
                degraded_to: None,
            },
            episode,
            ext: None,
        }
    }

    #[test]
    fn assemble_rules() {
        use OutcomeKind::*;
        use TrajectoryDirection::*;
        assert!(assemble_pair(
            traj(Forward, Success, 1, "a"),
            traj(Inverse, Success, 1, "b")
        )
        .is_ok());
        for (f, i) in [
            (
                traj(Forward, Failure, 1, "a"),
                traj(Inverse, Success, 1, "b"),
            ),
            (
                traj(Forward, Success, 1, "a"),
                traj(Inverse, Success, 2, "b"),
            ),
            (
                traj(Forward, Success, 1, "a"),
                traj(Forward, Success, 1, "b"),
            ),
        ] {
            assert!(matches!(
                assemble_pair(f, i),
                Err(CollectError::MismatchedPair(_))
            ));
        }
    }

    #[test]
    fn dataset_round_trip_and_counters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut ds = Dataset::create(&path).unwrap();
        let ok = DatasetRecord::Trajectory(traj(
            TrajectoryDirection::Forward,
            OutcomeKind::Success,
            0,
            "a",
        ));
        let bad = DatasetRecord::Trajectory(traj(
            TrajectoryDirection::Forward,
            OutcomeKind::Failure,
            0,
            "b",
        ));
        let mut offsets = Vec::new();
        let mut last = 0;
        for i in 0..50 {
            offsets.push(ds.append(&ok).unwrap());
            assert!(ds.byte_len() > last);
            last = ds.byte_len();
            if i % 10 == 0 {
                ds.append(&bad).unwrap();
            }
        }
        assert_eq!(ds.counter("primer_fwd"), 50);
        let (back, line) = read_at(&path, offsets[7]).unwrap();
        assert_eq!(back, ok);
        assert_eq!(line, ok.to_line());
        assert_eq!(std::fs::metadata(&path).unwrap().len(), ds.byte_len());
        let reopened = Dataset::open(&path).unwrap();
        assert_eq!(reopened.counters(), ds.counters());
        assert_eq!(reopened.record_count(), 55);
    }

    #[test]
    fn schema_tag_required() {
        let rec = DatasetRecord::Trajectory(traj(
            TrajectoryDirection::Inverse,
            OutcomeKind::Success,
            0,
            "a",
        ));
        let mut v = rec.to_value();
        assert_eq!(v["type"], "trajectory");
        assert_eq!(v["schema"], "eap-v1");
        v.as_object_mut().unwrap().remove("schema");
        assert!(DatasetRecord::from_value(v).is_err());
    }

    fn certain_pool(fwd: f64, inv: f64) -> PolicyPool {
        let mut specs: Vec<_> = fixtures::vanity_pool().specs().cloned().collect();
        for s in &mut specs {
            s.curve = LearningCurve::constant(if s.direction == Direction::Forward {
                fwd
            } else {
                inv
            });
        }
        PolicyPool::new(specs, 50).unwrap()
    }

    fn config(n: usize) -> CollectConfig {
        CollectConfig {
            subtask_id: "place_primer".into(),
            n_pairs: n,
            budget: 1_000_000,
            seed: 3,
            episode: 0,
            human: HumanConfig::unlimited(),
        }
    }

    #[test]
    fn certain_policies_need_no_human() {
        let s = Arc::new(fixtures::vanity_scenario());
        let run = collect_pairs(
            s.clone(),
            certain_pool(1.0, 1.0),
            Dataset::in_memory(),
            &config(10),
            EventLog::new(),
        )
        .unwrap();
        assert_eq!(run.pairs.len(), 10);
        assert_eq!(run.interventions, 0);
        assert_eq!(run.log.count(EventKind::Intervention), 0);
        assert_eq!(run.dataset.record_count(), 30);
        assert_eq!(run.dataset.counter("primer_fwd"), 10);
        assert_eq!(run.pool.trajectory_count("primer_fwd"), 60);
    }

    #[test]
    fn budget_exhaustion_keeps_partial_results() {
        let s = Arc::new(fixtures::vanity_scenario());
        let mut cfg = config(10);
        cfg.budget = 7;
        match collect_pairs(
            s,
            certain_pool(1.0, 1.0),
            Dataset::null(),
            &cfg,
            EventLog::new(),
        ) {
            Err(CollectError::BudgetExceeded { partial, .. }) => {
                assert_eq!(partial.pairs.len(), 3);
                assert_eq!(partial.attempts, 7);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn loop_invariant_and_human_after_degrading() {
        let s = Arc::new(fixtures::vanity_scenario());
        let run = collect_pairs(
            s.clone(),
            certain_pool(0.5, 0.7),
            Dataset::null(),
            &config(200),
            EventLog::new(),
        )
        .unwrap();
        assert_eq!(run.pairs.len(), 200);
        let st = s.subtask("place_primer").unwrap();
        let mut last_outcome: Option<serde_json::Value> = None;
        let mut human_seen = false;
        for e in run.log.events() {
            match e.kind {
                EventKind::Outcome => {
                    if let Some(prev) = &last_outcome {
                        if prev["failure_class"] == "Degrading" {
                            assert!(human_seen, "forward restarted before the human reset");
                        }
                    }
                    last_outcome = Some(e.payload.clone());
                    human_seen = false;
                }
                EventKind::Intervention => {
                    let prev = last_outcome.as_ref().unwrap();
                    assert_eq!(prev["kind"], "Failure");
                    assert!(prev["failure_class"] == "Degrading" || prev["direction"] == "Inverse");
                    human_seen = true;
                }
                _ => {}
            }
        }
        let mut after_pair = false;
        let mut checked = 0;
        for e in run.log.events().filter(|e| e.kind == EventKind::ToolCall) {
            let req = &e.payload["request"]["params"];
            if req["name"] == "append_trajectory"
                && req["arguments"]["trajectory"]["type"] == "pair"
            {
                after_pair = true;
            } else if after_pair && req["name"] == "env_summary" {
                let state: crate::simenv::EnvState =
                    serde_json::from_value(e.payload["response"]["result"]["structured"].clone())
                        .unwrap();
                assert!(in_precondition(&state, st, Direction::Forward));
                after_pair = false;
                checked += 1;
            }
        }
        assert_eq!(checked, 199);
    }
}
