//! Structured agent memory and the file-backed memory store.
//!
//! The agent's decision context is a [`MemoryState`]: who it is
//! ([`RoleIdentity`]), what it is trying to do ([`TaskMemory`]) and what it
//! did recently ([`WorkingMemory`]). Free-text memory lives in a
//! [`MemoryStore`], one JSON file per record, searchable by cosine similarity
//! over hashed bag-of-words embeddings.
//!
//! Store layout:
//!
//! ```text
//! <root>/manifest.json             {"next_record_id": N, "records": {id: {kind, file}}}
//! <root>/records/<record_id>.json  {record_id, kind, text, embedding[256], created_at}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{canonical_json, fnv1a64};

/// Dimension of every memory embedding.
pub const EMBEDDING_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("memory store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("memory store corrupt: {0}")]
    Corrupt(#[from] serde_json::Error),
    #[error("unknown subtask `{0}`")]
    NotFound(String),
    #[error("illegal transition for `{subtask}`: {from:?} -> {to:?}")]
    InvalidTransition {
        subtask: String,
        from: SubtaskStatus,
        to: SubtaskStatus,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentMode {
    DataCollector,
    TaskExecutor,
}

/// Tools a data collector may call.
pub const COLLECTOR_TOOLS: &[&str] = &[
    "append_trajectory",
    "call_human",
    "env_summary",
    "fetch_robot_stats",
    "start_policy",
    "terminate_policy",
];

/// Tools a task executor may call. Deployment never appends to the dataset
/// directly; its trajectories are reintegrated afterwards.
pub const EXECUTOR_TOOLS: &[&str] = &[
    "call_human",
    "change_policy",
    "env_summary",
    "fetch_robot_stats",
    "start_policy",
    "terminate_policy",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleIdentity {
    pub mode: AgentMode,
    pub allowed_tools: BTreeSet<String>,
}

impl RoleIdentity {
    pub fn for_mode(mode: AgentMode) -> Self {
        let tools = match mode {
            AgentMode::DataCollector => COLLECTOR_TOOLS,
            AgentMode::TaskExecutor => EXECUTOR_TOOLS,
        };
        Self {
            mode,
            allowed_tools: tools.iter().map(|t| t.to_string()).collect(),
        }
    }

    pub fn allows(&self, tool: &str) -> bool {
        self.allowed_tools.contains(tool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubtaskStatus {
    Pending,
    Active,
    Done,
    Failed,
    Escalated,
}

impl SubtaskStatus {
    /// Done and Escalated never change again.
    pub fn is_terminal(self) -> bool {
        matches!(self, SubtaskStatus::Done | SubtaskStatus::Escalated)
    }

    fn can_become(self, next: SubtaskStatus) -> bool {
        use SubtaskStatus::*;
        matches!(
            (self, next),
            (Pending, Active)
                | (Active, Done)
                | (Active, Failed)
                | (Active, Escalated)
                | (Failed, Active)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskEntry {
    pub subtask_id: String,
    pub description: String,
    pub status: SubtaskStatus,
}

/// Global task and per-subtask progress.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMemory {
    pub task_id: String,
    pub goal_text: String,
    pub subtasks: Vec<SubtaskEntry>,
    pub attempt_counts: BTreeMap<String, u32>,
}

impl TaskMemory {
    pub fn new(
        task_id: impl Into<String>,
        goal_text: impl Into<String>,
        subtasks: impl IntoIterator<Item = (String, String)>,
    ) -> Self {
        let subtasks: Vec<SubtaskEntry> = subtasks
            .into_iter()
            .map(|(subtask_id, description)| SubtaskEntry {
                subtask_id,
                description,
                status: SubtaskStatus::Pending,
            })
            .collect();
        let attempt_counts = subtasks.iter().map(|s| (s.subtask_id.clone(), 0)).collect();
        Self {
            task_id: task_id.into(),
            goal_text: goal_text.into(),
            subtasks,
            attempt_counts,
        }
    }

    pub fn entry(&self, subtask_id: &str) -> Option<&SubtaskEntry> {
        self.subtasks.iter().find(|s| s.subtask_id == subtask_id)
    }

    pub fn status(&self, subtask_id: &str) -> Option<SubtaskStatus> {
        self.entry(subtask_id).map(|s| s.status)
    }

    pub fn attempts(&self, subtask_id: &str) -> u32 {
        self.attempt_counts.get(subtask_id).copied().unwrap_or(0)
    }

    pub fn active(&self) -> Option<&SubtaskEntry> {
        self.subtasks
            .iter()
            .find(|s| s.status == SubtaskStatus::Active)
    }

    pub fn all_terminal(&self) -> bool {
        self.subtasks.iter().all(|s| s.status.is_terminal())
    }

    /// Applies one status transition in place.
    ///
    /// Allowed edges: Pending→Active, Active→{Done, Failed, Escalated} and
    /// Failed→Active (a retry, which bumps the attempt count). A second
    /// Active subtask is rejected.
    pub fn transition(&mut self, subtask_id: &str, next: SubtaskStatus) -> Result<(), MemoryError> {
        let idx = self
            .subtasks
            .iter()
            .position(|s| s.subtask_id == subtask_id)
            .ok_or_else(|| MemoryError::NotFound(subtask_id.to_string()))?;
        let current = self.subtasks[idx].status;
        let other_active = self
            .subtasks
            .iter()
            .enumerate()
            .any(|(i, s)| i != idx && s.status == SubtaskStatus::Active);
        if !current.can_become(next) || (next == SubtaskStatus::Active && other_active) {
            return Err(MemoryError::InvalidTransition {
                subtask: subtask_id.to_string(),
                from: current,
                to: next,
            });
        }
        if current == SubtaskStatus::Failed && next == SubtaskStatus::Active {
            *self
                .attempt_counts
                .entry(subtask_id.to_string())
                .or_insert(0) += 1;
        }
        self.subtasks[idx].status = next;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolHistoryEntry {
    pub sequence_no: u64,
    pub tool_name: String,
    pub args_digest: String,
    pub result_digest: String,
    pub timestamp: u64,
}

/// Short-term execution context. The tool history is append-only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkingMemory {
    pub active_skill: Option<String>,
    pub tool_history: Vec<ToolHistoryEntry>,
}

impl WorkingMemory {
    pub fn record_call(
        &mut self,
        tool_name: &str,
        args_digest: String,
        result_digest: String,
        timestamp: u64,
    ) -> u64 {
        let sequence_no = self.tool_history.last().map_or(0, |e| e.sequence_no + 1);
        self.tool_history.push(ToolHistoryEntry {
            sequence_no,
            tool_name: tool_name.to_string(),
            args_digest,
            result_digest,
            timestamp,
        });
        sequence_no
    }
}

/// The agent's whole decision context apart from the observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryState {
    pub role: RoleIdentity,
    pub task: TaskMemory,
    pub working: WorkingMemory,
}

impl MemoryState {
    pub fn new(mode: AgentMode, task: TaskMemory) -> Self {
        Self {
            role: RoleIdentity::for_mode(mode),
            task,
            working: WorkingMemory::default(),
        }
    }

    pub fn to_json(&self) -> String {
        canonical_json(self).expect("memory state is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, MemoryError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecordKind {
    Role,
    Task,
    Working,
    Note,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub record_id: u64,
    pub kind: RecordKind,
    pub text: String,
    pub embedding: Vec<f64>,
    pub created_at: String,
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Hashed bag-of-words embedding.
///
/// Tokens are maximal runs of alphanumeric characters, lowercased. Each token
/// lands in bucket `fnv1a64(utf8 bytes) % 256`; bucket counts are then
/// L2-normalized. Text without tokens maps to the zero vector.
pub fn embed(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; EMBEDDING_DIM];
    for tok in tokens(text) {
        v[(fnv1a64(tok.as_bytes()) % EMBEDDING_DIM as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    kind: RecordKind,
    file: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    next_record_id: u64,
    records: BTreeMap<u64, IndexEntry>,
}

/// Directory-backed record store. Single writer; every write goes to a
/// temporary file first and is renamed into place.
#[derive(Debug)]
pub struct MemoryStore {
    root: PathBuf,
    manifest: Manifest,
    records: BTreeMap<u64, MemoryRecord>,
}

impl MemoryStore {
    /// Opens (creating if needed) the store rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("records"))?;
        let manifest_path = root.join("manifest.json");
        let manifest: Manifest = if manifest_path.exists() {
            serde_json::from_slice(&fs::read(&manifest_path)?)?
        } else {
            Manifest::default()
        };
        let mut records = BTreeMap::new();
        for (id, entry) in &manifest.records {
            let rec: MemoryRecord = serde_json::from_slice(&fs::read(root.join(&entry.file))?)?;
            records.insert(*id, rec);
        }
        Ok(Self {
            root,
            manifest,
            records,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: u64) -> Option<&MemoryRecord> {
        self.records.get(&record_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &MemoryRecord> {
        self.records.values()
    }

    /// Persists a new record and returns its id. Ids are strictly increasing.
    pub fn put(&mut self, kind: RecordKind, text: &str) -> Result<u64, MemoryError> {
        let record_id = self.manifest.next_record_id;
        let record = MemoryRecord {
            record_id,
            kind,
            text: text.to_string(),
            embedding: embed(text),
            created_at: chrono::Utc::now().to_rfc3339(),
        };
        let file = format!("records/{record_id}.json");
        write_atomic(&self.root.join(&file), canonical_json(&record)?.as_bytes())?;
        self.manifest.next_record_id += 1;
        self.manifest
            .records
            .insert(record_id, IndexEntry { kind, file });
        write_atomic(
            &self.root.join("manifest.json"),
            canonical_json(&self.manifest)?.as_bytes(),
        )?;
        self.records.insert(record_id, record);
        Ok(record_id)
    }

    /// Top-`k` records by cosine similarity to `query`, best first, ties by
    /// ascending id. A query without tokens matches nothing.
    pub fn search(&self, query: &str, k: usize) -> Vec<(u64, f64)> {
        let q = embed(query);
        if q.iter().all(|&x| x == 0.0) {
            return Vec::new();
        }
        let mut scored: Vec<(u64, f64)> = self
            .records
            .values()
            .map(|r| (r.record_id, cosine(&q, &r.embedding)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    /// Most recently persisted task memory, if any.
    pub fn latest_task(&self) -> Result<Option<TaskMemory>, MemoryError> {
        match self
            .records
            .values()
            .rev()
            .find(|r| r.kind == RecordKind::Task)
        {
            Some(r) => Ok(Some(serde_json::from_str(&r.text)?)),
            None => Ok(None),
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

/// Convenience wrapper over [`MemoryStore::put`].
pub fn mem_put(store: &mut MemoryStore, kind: RecordKind, text: &str) -> Result<u64, MemoryError> {
    store.put(kind, text)
}

pub fn mem_search(store: &MemoryStore, query: &str, k: usize) -> Vec<(u64, f64)> {
    store.search(query, k)
}

/// Applies a status transition and persists the result as a Task record.
pub fn mem_update_task(
    store: &mut MemoryStore,
    task: &TaskMemory,
    subtask_id: &str,
    status: SubtaskStatus,
) -> Result<TaskMemory, MemoryError> {
    let mut updated = task.clone();
    updated.transition(subtask_id, status)?;
    store.put(RecordKind::Task, &canonical_json(&updated)?)?;
    Ok(updated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_step_task() -> TaskMemory {
        TaskMemory::new(
            "t1",
            "tidy the vanity",
            vec![
                ("place_primer".to_string(), "place the primer".to_string()),
                ("place_lotion".to_string(), "place the lotion".to_string()),
            ],
        )
    }

    #[test]
    fn empty_text_embeds_to_zero() {
        assert!(embed("").iter().all(|&x| x == 0.0));
        assert!(embed("  ,;; ").iter().all(|&x| x == 0.0));
    }

    #[test]
    fn repeated_token_is_a_unit_basis_vector() {
        let v = embed("drawer drawer");
        let nonzero: Vec<f64> = v.iter().copied().filter(|&x| x != 0.0).collect();
        assert_eq!(nonzero, vec![1.0]);
    }

    #[test]
    fn embedding_is_case_and_punctuation_insensitive() {
        assert_eq!(embed("Close the DRAWER!"), embed("close the drawer"));
    }

    #[test]
    fn store_round_trip_and_monotone_ids() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = MemoryStore::open(dir.path()).unwrap();
        let a = store.put(RecordKind::Note, "drawer is open").unwrap();
        let b = store.put(RecordKind::Note, "lotion tipped").unwrap();
        assert!(b > a);
        let reopened = MemoryStore::open(dir.path()).unwrap();
        assert_eq!(reopened.get(a).unwrap().text, "drawer is open");
        assert_eq!(reopened.get(a), store.get(a));
        assert!(dir.path().join(format!("records/{a}.json")).exists());
    }

    #[test]
    fn hundred_records_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = MemoryStore::open(dir.path()).unwrap();
            for i in 0..100 {
                store
                    .put(RecordKind::Note, &format!("note number {i}"))
                    .unwrap();
            }
        }
        let store = MemoryStore::open(dir.path()).unwrap();
        assert_eq!(store.len(), 100);
        let mut again = store;
        assert_eq!(again.put(RecordKind::Note, "one more").unwrap(), 100);
    }

    #[test]
    fn search_self_match_and_empty_query() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = MemoryStore::open(dir.path()).unwrap();
        let id = store.put(RecordKind::Note, "primer in drawer").unwrap();
        let hits = store.search("primer in drawer", 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, id);
        assert!((hits[0].1 - 1.0).abs() < 1e-9);
        assert!(store.search("", 5).is_empty());
    }

    #[test]
    fn search_ties_break_by_record_id() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = MemoryStore::open(dir.path()).unwrap();
        let a = store.put(RecordKind::Note, "lipstick slot").unwrap();
        let b = store.put(RecordKind::Note, "lipstick slot").unwrap();
        store.put(RecordKind::Note, "tissue").unwrap();
        let hits = store.search("lipstick slot", 2);
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![a, b]);
    }

    #[test]
    fn task_transitions() {
        let mut t = two_step_task();
        t.transition("place_primer", SubtaskStatus::Active).unwrap();
        assert_eq!(
            t.subtasks
                .iter()
                .filter(|s| s.status == SubtaskStatus::Active)
                .count(),
            1
        );
        assert!(matches!(
            t.transition("place_lotion", SubtaskStatus::Active),
            Err(MemoryError::InvalidTransition { .. })
        ));
        t.transition("place_primer", SubtaskStatus::Done).unwrap();
        assert!(matches!(
            t.transition("place_primer", SubtaskStatus::Active),
            Err(MemoryError::InvalidTransition { .. })
        ));
        assert!(matches!(
            t.transition("nope", SubtaskStatus::Active),
            Err(MemoryError::NotFound(_))
        ));
    }

    #[test]
    fn retries_are_counted_and_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = MemoryStore::open(dir.path()).unwrap();
        let mut t = two_step_task();
        for status in [
            SubtaskStatus::Active,
            SubtaskStatus::Failed,
            SubtaskStatus::Active,
            SubtaskStatus::Failed,
            SubtaskStatus::Active,
        ] {
            t = mem_update_task(&mut store, &t, "place_primer", status).unwrap();
        }
        assert_eq!(t.attempts("place_primer"), 2);
        let reopened = MemoryStore::open(dir.path()).unwrap();
        assert_eq!(reopened.latest_task().unwrap().unwrap(), t);
    }

    fn arb_status() -> impl Strategy<Value = SubtaskStatus> {
        prop_oneof![
            Just(SubtaskStatus::Pending),
            Just(SubtaskStatus::Active),
            Just(SubtaskStatus::Done),
            Just(SubtaskStatus::Failed),
            Just(SubtaskStatus::Escalated),
        ]
    }

    proptest! {
        #[test]
        fn status_machine_never_breaks(ops in proptest::collection::vec((0usize..2, arb_status()), 0..60)) {
            let mut t = two_step_task();
            let ids = ["place_primer", "place_lotion"];
            let mut done = [false; 2];
            for (i, s) in ops {
                let _ = t.transition(ids[i], s);
                let active = t.subtasks.iter().filter(|e| e.status == SubtaskStatus::Active).count();
                prop_assert!(active <= 1);
                for (j, id) in ids.iter().enumerate() {
                    let st = t.status(id).unwrap();
                    if done[j] {
                        prop_assert_eq!(st, SubtaskStatus::Done);
                    }
                    done[j] = st == SubtaskStatus::Done;
                }
            }
        }

        #[test]
        fn memory_state_round_trips(
            goal in "[a-z ]{0,20}",
            calls in proptest::collection::vec(("[a-z_]{1,12}", any::<u64>()), 0..10),
            skill in proptest::option::of("[a-z-]{1,10}"),
        ) {
            let mut m = MemoryState::new(AgentMode::TaskExecutor, TaskMemory::new("t", goal, vec![("a".into(), "b".into())]));
            m.working.active_skill = skill;
            for (name, ts) in calls {
                m.working.record_call(&name, "x".into(), "y".into(), ts);
            }
            let text = m.to_json();
            let back = MemoryState::from_json(&text).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.to_json(), text);
        }

        #[test]
        fn any_text_finds_itself(text in "[a-zA-Z0-9 ]{1,40}") {
            prop_assume!(text.chars().any(|c| c.is_alphanumeric()));
            let dir = tempfile::tempdir().unwrap();
            let mut store = MemoryStore::open(dir.path()).unwrap();
            let id = store.put(RecordKind::Note, &text).unwrap();
            let hits = store.search(&text, 1);
            prop_assert_eq!(hits[0].0, id);
            prop_assert!(hits[0].1 >= 1.0 - 1e-9);
        }
    }
}
